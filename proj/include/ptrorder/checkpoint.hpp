#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ptrorder/corpus.hpp"
#include "ptrorder/ptr_model.hpp"
#include "ptrorder/training.hpp"

namespace ptrorder {

// Text container:
//
//   ptrorder-checkpoint 1
//   config <k>            followed by k lines `key = value`
//   vocab <V>             followed by V tokens, one per line
//   progress <epoch> <best_epoch> <best_dev>
//   param <name> <rank> <dims...>      followed by one line of values
//   adagrad <lr> <eps> <init> <count>       followed by `accum` records like `param`
//   end
//
// Doubles are written as hexadecimal floats so the round trip is exact.
constexpr const char* kCheckpointMagic = "ptrorder-checkpoint";
constexpr int kCheckpointVersion = 1;

struct TrainingProgress {
  std::size_t epoch = 0;       // epochs completed
  std::size_t best_epoch = 0;  // 0 = none yet
  double best_dev = -1.0;      // best dev PM-F so far
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  TrainConfig config;
  ConfigEntries config_echo;
  Vocab vocab;
  TrainingProgress progress;
  std::vector<NamedTensor> params;
  AdaGradState optimizer;
};

inline std::string hex_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

inline double parse_hex_double(const std::string& s, const std::string& where) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double x = std::strtod(begin, &end);
  if (end == begin || *end != '\0') throw FormatError(where + ": bad number '" + s + "'");
  return x;
}

namespace detail {

inline void write_tensor(std::ostream& out, const char* tag, const std::string& name, const Tensor& t) {
  out << tag << ' ' << name << ' ' << t.rank();
  for (std::size_t d : t.shape()) out << ' ' << d;
  out << '\n';
  for (std::size_t i = 0; i < t.size(); ++i) out << (i ? " " : "") << hex_double(t[i]);
  out << '\n';
}

class CheckpointReader {
 public:
  CheckpointReader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}

  std::string where() const { return name_ + ":" + std::to_string(line_no_); }

  std::string line() {
    std::string s;
    if (!std::getline(in_, s)) throw FormatError(name_ + ": truncated checkpoint after line " + std::to_string(line_no_));
    ++line_no_;
    return s;
  }

  std::vector<std::string> fields() {
    std::istringstream ss(line());
    std::vector<std::string> out;
    for (std::string f; ss >> f;) out.push_back(f);
    return out;
  }

  std::vector<std::string> expect(const std::string& tag, std::size_t min_fields) {
    auto f = fields();
    if (f.empty() || f[0] != tag || f.size() < min_fields) {
      throw FormatError(where() + ": expected '" + tag + "' record");
    }
    return f;
  }

  std::size_t count(const std::string& s) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(s, &used);
      if (used == s.size()) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    throw FormatError(where() + ": bad count '" + s + "'");
  }

  NamedTensor tensor(const std::string& tag) {
    const auto f = expect(tag, 3);
    const std::size_t rank = count(f[2]);
    if (rank == 0 || f.size() != 3 + rank) throw FormatError(where() + ": bad shape for " + f[1]);
    Shape shape;
    for (std::size_t k = 0; k < rank; ++k) shape.push_back(count(f[3 + k]));
    const std::string header = where();
    const auto values = fields();
    if (values.size() != shape_size(shape)) {
      throw FormatError(where() + ": " + f[1] + " has " + std::to_string(values.size()) + " values, expected " +
                        std::to_string(shape_size(shape)));
    }
    std::vector<double> data;
    data.reserve(values.size());
    for (const auto& v : values) data.push_back(parse_hex_double(v, header));
    return {f[1], Tensor(shape, std::move(data))};
  }

 private:
  std::istream& in_;
  std::string name_;
  std::size_t line_no_ = 0;
};

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const TrainConfig& cfg, const Vocab& vocab, PtrNet& model,
                             const AdaGradState& opt, const TrainingProgress& progress) {
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  const auto entries = config_entries(cfg);
  out << "config " << entries.size() << '\n';
  for (const auto& [k, v] : entries) out << k << " = " << v << '\n';
  out << "vocab " << vocab.size() << '\n';
  for (const auto& t : vocab.tokens()) out << t << '\n';
  out << "progress " << progress.epoch << ' ' << progress.best_epoch << ' ' << hex_double(progress.best_dev) << '\n';
  const auto params = model.params();
  for (const Param* p : params) detail::write_tensor(out, "param", p->name, p->value);
  out << "adagrad " << hex_double(opt.learning_rate) << ' ' << hex_double(opt.epsilon) << ' '
      << hex_double(opt.initial) << ' ' << opt.accumulators.size() << '\n';
  for (std::size_t k = 0; k < opt.accumulators.size(); ++k) {
    detail::write_tensor(out, "accum", params.at(k)->name, opt.accumulators[k]);
  }
  out << "end\n";
}

// Written to a sibling temporary file and renamed so a crash never leaves a
// half-written checkpoint under the final name.
inline void save_checkpoint(const std::string& path, const TrainConfig& cfg, const Vocab& vocab, PtrNet& model,
                            const AdaGradState& opt, const TrainingProgress& progress) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write checkpoint " + path);
    write_checkpoint(out, cfg, vocab, model, opt, progress);
    out.flush();
    if (!out) throw FormatError("failed writing checkpoint " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw FormatError("cannot move checkpoint into place at " + path);
}

inline Checkpoint read_checkpoint(std::istream& in, const std::string& name) {
  detail::CheckpointReader r(in, name);
  Checkpoint ck;
  const auto head = r.fields();
  if (head.size() != 2 || head[0] != kCheckpointMagic) throw FormatError(name + ": not a checkpoint file");
  if (head[1] != std::to_string(kCheckpointVersion)) throw FormatError(name + ": unsupported checkpoint version " + head[1]);

  const std::size_t nconf = r.count(r.expect("config", 2)[1]);
  for (std::size_t i = 0; i < nconf; ++i) {
    const std::string s = r.line();
    const auto eq = s.find(" = ");
    if (eq == std::string::npos) throw FormatError(r.where() + ": bad config line");
    ck.config_echo.emplace_back(s.substr(0, eq), s.substr(eq + 3));
    try {
      apply_config_entry(ck.config, ck.config_echo.back().first, ck.config_echo.back().second);
    } catch (const ConfigError& e) {
      throw FormatError(r.where() + ": " + e.what());
    }
  }

  const std::size_t nvocab = r.count(r.expect("vocab", 2)[1]);
  std::vector<std::string> tokens;
  tokens.reserve(nvocab);
  for (std::size_t i = 0; i < nvocab; ++i) tokens.push_back(r.line());
  ck.vocab = Vocab::from_tokens(std::move(tokens));

  const auto prog = r.expect("progress", 4);
  ck.progress.epoch = r.count(prog[1]);
  ck.progress.best_epoch = r.count(prog[2]);
  ck.progress.best_dev = parse_hex_double(prog[3], r.where());

  // Parameter records run until the adagrad header.
  while (true) {
    const auto pos = in.tellg();
    std::string peek;
    if (!(in >> peek)) throw FormatError(name + ": truncated checkpoint (missing adagrad section)");
    in.seekg(pos);
    if (peek == "adagrad") break;
    ck.params.push_back(r.tensor("param"));
  }
  const auto ag = r.expect("adagrad", 5);
  ck.optimizer.learning_rate = parse_hex_double(ag[1], r.where());
  ck.optimizer.epsilon = parse_hex_double(ag[2], r.where());
  ck.optimizer.initial = parse_hex_double(ag[3], r.where());
  const std::size_t nacc = r.count(ag[4]);
  for (std::size_t k = 0; k < nacc; ++k) {
    NamedTensor t = r.tensor("accum");
    if (k >= ck.params.size() || t.name != ck.params[k].name || t.value.shape() != ck.params[k].value.shape()) {
      throw FormatError(r.where() + ": accumulator " + t.name + " does not match parameter list");
    }
    ck.optimizer.accumulators.push_back(std::move(t.value));
  }
  r.expect("end", 1);
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read checkpoint " + path);
  return read_checkpoint(in, path);
}

// Refuse a checkpoint whose model shape disagrees with `expected`.
inline void require_compatible(const Checkpoint& ck, const TrainConfig& expected) {
  const auto diff = model_config_diff(ck.config, expected);
  if (diff.empty()) return;
  std::string msg = "checkpoint config mismatch:";
  for (const auto& d : diff) msg += " [" + d + "]";
  throw ConfigError(msg);
}

// Rebuild the model and copy every stored tensor into it by name.
inline PtrNet restore_model(const Checkpoint& ck) {
  Rng rng(ck.config.seed);
  PtrNet model(ck.config.model_config(ck.vocab.size()), rng);
  const auto params = model.params();
  if (params.size() != ck.params.size()) {
    throw ConfigError("checkpoint has " + std::to_string(ck.params.size()) + " parameters, model expects " +
                      std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const NamedTensor& t = ck.params[k];
    if (t.name != params[k]->name || t.value.shape() != params[k]->value.shape()) {
      throw ConfigError("checkpoint parameter " + t.name + " " + shape_string(t.value.shape()) +
                        " does not match model parameter " + params[k]->name + " " +
                        shape_string(params[k]->value.shape()));
    }
    params[k]->value = t.value;
    params[k]->zero_grad();
  }
  return model;
}

}  // namespace ptrorder
