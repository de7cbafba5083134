#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ptrorder/corpus.hpp"
#include "ptrorder/decoding.hpp"
#include "ptrorder/metrics.hpp"
#include "ptrorder/ptr_model.hpp"

namespace ptrorder {

// Training and model hyper-parameters. Defaults are the published settings;
// epochs, seed and the gradient-clipping threshold are additions.
struct TrainConfig {
  double learning_rate = 0.5;
  double l2 = 1e-5;
  std::size_t hidden = 200;
  std::vector<std::size_t> filter_lengths{3, 4, 5};
  std::size_t feature_maps = 128;
  std::size_t lstm_hidden = 200;
  std::size_t embedding_dim = 100;
  std::size_t beam = 64;
  std::size_t batch_size = 128;
  std::size_t epochs = 30;
  std::uint64_t seed = 1;
  EncoderKind encoder = EncoderKind::lstm;
  NoiseMode noise = NoiseMode::none;
  bool fixed_length = true;
  double clip_norm = 5.0;  // 0 disables clipping
  double adagrad_eps = 1e-6;
  double adagrad_init = 0.0;  // initial accumulator value
  std::size_t min_count = 1;

  ModelConfig model_config(std::size_t vocab_size) const {
    ModelConfig m;
    m.encoder.kind = encoder;
    m.encoder.embedding_dim = embedding_dim;
    m.encoder.filter_lengths = filter_lengths;
    m.encoder.feature_maps = feature_maps;
    m.encoder.lstm_hidden = lstm_hidden;
    m.hidden = hidden;
    m.vocab_size = vocab_size;
    return m;
  }

  InstanceOptions instance_options() const { return {noise, fixed_length}; }
  DecodeMode decode_mode() const {
    return fixed_length ? DecodeMode::fixed_length : DecodeMode::variable_length;
  }
};

// Round-trippable text form of a double.
inline std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

inline ConfigEntries config_entries(const TrainConfig& c) {
  return {
      {"learning_rate", format_double(c.learning_rate)},
      {"l2", format_double(c.l2)},
      {"hidden", std::to_string(c.hidden)},
      {"filter_lengths", join_sizes(c.filter_lengths)},
      {"feature_maps", std::to_string(c.feature_maps)},
      {"lstm_hidden", std::to_string(c.lstm_hidden)},
      {"embedding_dim", std::to_string(c.embedding_dim)},
      {"beam", std::to_string(c.beam)},
      {"batch_size", std::to_string(c.batch_size)},
      {"epochs", std::to_string(c.epochs)},
      {"seed", std::to_string(c.seed)},
      {"encoder", to_string(c.encoder)},
      {"noise", to_string(c.noise)},
      {"fixed_length", c.fixed_length ? "on" : "off"},
      {"clip_norm", format_double(c.clip_norm)},
      {"adagrad_eps", format_double(c.adagrad_eps)},
      {"adagrad_init", format_double(c.adagrad_init)},
      {"min_count", std::to_string(c.min_count)},
  };
}

namespace detail {

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
}

inline bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("config: " + key + " expects on/off, got '" + v + "'");
}

}  // namespace detail

// Apply one `key = value` setting; unknown keys are an error.
inline void apply_config_entry(TrainConfig& c, const std::string& key, const std::string& v) {
  using namespace detail;
  if (key == "learning_rate") c.learning_rate = parse_real(key, v);
  else if (key == "l2") c.l2 = parse_real(key, v);
  else if (key == "hidden") c.hidden = parse_uint(key, v);
  else if (key == "filter_lengths") {
    c.filter_lengths.clear();
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) c.filter_lengths.push_back(parse_uint(key, item));
    if (c.filter_lengths.empty()) throw ConfigError("config: filter_lengths is empty");
  } else if (key == "feature_maps") c.feature_maps = parse_uint(key, v);
  else if (key == "lstm_hidden") c.lstm_hidden = parse_uint(key, v);
  else if (key == "embedding_dim") c.embedding_dim = parse_uint(key, v);
  else if (key == "beam") c.beam = parse_uint(key, v);
  else if (key == "batch_size") c.batch_size = parse_uint(key, v);
  else if (key == "epochs") c.epochs = parse_uint(key, v);
  else if (key == "seed") c.seed = parse_uint(key, v);
  else if (key == "encoder") c.encoder = parse_encoder_kind(v);
  else if (key == "noise") c.noise = parse_noise_mode(v);
  else if (key == "fixed_length") c.fixed_length = parse_flag(key, v);
  else if (key == "clip_norm") c.clip_norm = parse_real(key, v);
  else if (key == "adagrad_eps") c.adagrad_eps = parse_real(key, v);
  else if (key == "adagrad_init") c.adagrad_init = parse_real(key, v);
  else if (key == "min_count") c.min_count = parse_uint(key, v);
  else throw ConfigError("config: unknown key '" + key + "'");
}

inline void validate(const TrainConfig& c) {
  if (c.batch_size == 0) throw ConfigError("config: batch_size must be >= 1");
  if (c.beam == 0) throw ConfigError("config: beam must be >= 1");
  if (c.hidden == 0 || c.lstm_hidden == 0 || c.embedding_dim == 0 || c.feature_maps == 0) {
    throw ConfigError("config: layer sizes must be >= 1");
  }
  if (c.min_count == 0) throw ConfigError("config: min_count must be >= 1");
  if (c.adagrad_init < 0.0 || c.adagrad_eps < 0.0 || c.learning_rate <= 0.0) {
    throw ConfigError("config: learning_rate must be > 0, adagrad_eps and adagrad_init >= 0");
  }
  if (c.noise != NoiseMode::none && c.fixed_length) {
    throw ConfigError("config: noise injection requires fixed_length = off");
  }
}

// Keys that determine parameter shapes; a checkpoint can only be used with a
// configuration that agrees on all of them.
inline const std::vector<std::string>& model_shape_keys() {
  static const std::vector<std::string> keys{"hidden", "filter_lengths", "feature_maps",
                                             "lstm_hidden", "embedding_dim", "encoder"};
  return keys;
}

// "key: a -> b" for every model-shape key that differs.
inline std::vector<std::string> model_config_diff(const TrainConfig& a, const TrainConfig& b) {
  const auto ea = config_entries(a);
  const auto eb = config_entries(b);
  std::vector<std::string> diff;
  for (const auto& key : model_shape_keys()) {
    auto find = [&](const ConfigEntries& e) {
      return std::find_if(e.begin(), e.end(), [&](const auto& kv) { return kv.first == key; })->second;
    };
    const auto va = find(ea), vb = find(eb);
    if (va != vb) diff.push_back(key + ": " + va + " -> " + vb);
  }
  return diff;
}

// AdaGrad: G += g^2; theta -= lr * g / (sqrt(G) + eps). Accumulators follow
// the parameter order of the model and start at `initial`.
struct AdaGradState {
  double learning_rate = 0.5;
  double epsilon = 1e-6;
  double initial = 0.0;
  std::vector<Tensor> accumulators;
};

inline AdaGradState make_optimizer(const TrainConfig& c) {
  return {c.learning_rate, c.adagrad_eps, c.adagrad_init, {}};
}

inline void adagrad_step(std::span<Param* const> params, AdaGradState& state) {
  for (Param* p : params) {
    if (!p->grad.all_finite()) throw NumericError("adagrad: non-finite gradient in parameter " + p->name);
  }
  if (state.accumulators.empty()) {
    for (Param* p : params) state.accumulators.emplace_back(p->value.shape(), state.initial);
  }
  if (state.accumulators.size() != params.size()) {
    throw DimensionError("adagrad: accumulator count does not match parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    Tensor& G = state.accumulators[k];
    G.require_same_shape(p.value, "adagrad accumulator");
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      G[i] += g * g;
      p.value[i] -= state.learning_rate * g / (std::sqrt(G[i]) + state.epsilon);
    }
    p.zero_grad();
  }
}

// Rescale all gradients so their global L2 norm is at most max_norm. Returns
// the norm before clipping.
inline double clip_gradients(std::span<Param* const> params, double max_norm) {
  double sq = 0.0;
  for (const Param* p : params) sq += p->grad.squared_norm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Param* p : params) {
      for (double& g : p->grad.data()) g *= s;
    }
  }
  return norm;
}

constexpr std::uint64_t kBatchOrderStream = 0x6261746368ULL;
constexpr std::uint64_t kEvalStream = 0x6576616cULL;

inline std::vector<Instance> make_instances(const std::vector<Document>& docs, std::uint64_t seed,
                                            const InstanceOptions& opts, const NoisePool* pool) {
  std::vector<Instance> out;
  out.reserve(docs.size());
  for (const Document& d : docs) out.push_back(make_instance(d, seed, opts, pool));
  return out;
}

struct EpochResult {
  double loss = 0.0;  // mean batch loss
  std::size_t batches = 0;
  double max_grad_norm = 0.0;
};

// One pass over `docs` with fresh epoch-keyed permutations, a shuffled
// instance order, and one AdaGrad update per mini-batch (the last batch may
// be partial).
inline EpochResult train_epoch(PtrNet& model, const std::vector<Document>& docs, const TrainConfig& cfg,
                               std::size_t epoch, AdaGradState& opt, const NoisePool* pool = nullptr) {
  if (docs.empty()) throw EmptyInputError("train_epoch: empty training split");
  const std::uint64_t seed = epoch_seed(cfg.seed, epoch);
  const auto instances = make_instances(docs, seed, cfg.instance_options(), pool);
  Rng order_rng(mix_seed(seed, kBatchOrderStream));
  const auto order = order_rng.permutation(instances.size());
  const auto params = model.params();

  EpochResult r;
  double total = 0.0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_size);
    std::vector<Instance> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(instances[order[i]]);
    model.zero_grads();
    total += batch_loss(model, batch, cfg.l2, true);
    r.max_grad_norm = std::max(r.max_grad_norm, clip_gradients(params, cfg.clip_norm));
    adagrad_step(params, opt);
    ++r.batches;
  }
  r.loss = total / static_cast<double>(r.batches);
  return r;
}

// Runs fn(0..n-1). With jobs > 1 each worker owns a strided slice of the
// indices; fn must only write to its own index. The first exception is
// rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(jobs);
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += jobs) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct EvalOptions {
  std::size_t beam = 0;  // 0 = greedy
  InstanceOptions instance;
  std::uint64_t seed = 1;
  const NoisePool* pool = nullptr;
  bool gold_as_prediction = false;
  std::size_t jobs = 1;
};

struct Evaluation {
  MetricsReport report;
  std::vector<Instance> instances;
  std::vector<Order> predictions;
};

inline bool is_permutation_of_inputs(const Order& o, std::size_t n) {
  if (o.size() != n) return false;
  for (std::size_t p : o.positions) {
    if (p >= n) return false;
  }
  return distinct_positions(o.positions);
}

// Decode every document of a split and aggregate the metrics. Instances are
// drawn with a fixed evaluation seed so repeated evaluations agree.
inline Evaluation evaluate(PtrNet& model, const std::vector<Document>& docs, const EvalOptions& opts) {
  if (docs.empty()) throw EmptyInputError("evaluate: empty split");
  Evaluation ev;
  ev.instances = make_instances(docs, mix_seed(opts.seed, kEvalStream), opts.instance, opts.pool);
  ev.predictions.resize(ev.instances.size());
  const DecodeMode mode = opts.instance.fixed_length ? DecodeMode::fixed_length : DecodeMode::variable_length;
  auto decode_one = [&](std::size_t i) {
    const Instance& inst = ev.instances[i];
    if (opts.gold_as_prediction) {
      ev.predictions[i] = inst.target;
    } else if (opts.beam == 0) {
      ev.predictions[i] = greedy_decode(model, inst, mode);
    } else {
      ev.predictions[i] = beam_decode(model, inst, opts.beam, mode).best;
    }
  };
  parallel_for(ev.instances.size(), opts.jobs, decode_one);
  std::vector<Positions> preds, golds;
  for (std::size_t i = 0; i < ev.instances.size(); ++i) {
    if (mode == DecodeMode::fixed_length && !is_permutation_of_inputs(ev.predictions[i], ev.instances[i].size())) {
      throw InvariantError("evaluate: fixed-length decoding produced a non-permutation for " +
                           ev.instances[i].doc_id);
    }
    preds.push_back(ev.predictions[i].positions);
    golds.push_back(ev.instances[i].target.positions);
  }
  ev.report = evaluate_orders(preds, golds);
  return ev;
}

}  // namespace ptrorder
