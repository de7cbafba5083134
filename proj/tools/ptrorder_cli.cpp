#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ptrorder/ptrorder.hpp"

namespace fs = std::filesystem;
using namespace ptrorder;

namespace {

struct SharedFlags {
  std::string config;
  std::uint64_t seed = 0;
  std::string encoder;
  std::size_t beam = 0;
  std::string noise;
  std::string fixed_length;
  std::string checkpoint;
  std::string out = ".";
  std::size_t jobs = 1;
  std::vector<std::string> settings;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* encoder_opt = nullptr;
  CLI::Option* beam_opt = nullptr;
  CLI::Option* noise_opt = nullptr;
  CLI::Option* fixed_opt = nullptr;
};

void add_shared(CLI::App* cmd, SharedFlags& f) {
  cmd->add_option("--config", f.config, "key = value configuration file")->check(CLI::ExistingFile);
  f.seed_opt = cmd->add_option("--seed", f.seed, "run seed");
  f.encoder_opt = cmd->add_option("--encoder", f.encoder, "sentence encoder")
                      ->check(CLI::IsMember({"cbow", "cnn", "lstm"}));
  f.beam_opt = cmd->add_option("--beam", f.beam, "beam size")->check(CLI::PositiveNumber);
  f.noise_opt = cmd->add_option("--noise", f.noise, "noise injection")->check(CLI::IsMember({"none", "one", "half"}));
  f.fixed_opt = cmd->add_option("--fixed-length", f.fixed_length, "fixed-length decoding")
                    ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--checkpoint", f.checkpoint, "checkpoint path");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--jobs", f.jobs, "decoding threads")->check(CLI::PositiveNumber);
  cmd->add_option("--set", f.settings, "extra key=value setting (repeatable)");
}

// base <- config file <- explicit flags.
TrainConfig resolve_config(const SharedFlags& f, TrainConfig cfg) {
  if (!f.config.empty()) read_config_file(f.config, cfg);
  for (const auto& s : f.settings) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    apply_config_entry(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  if (f.seed_opt->count()) cfg.seed = f.seed;
  if (f.encoder_opt->count()) cfg.encoder = parse_encoder_kind(f.encoder);
  if (f.beam_opt->count()) cfg.beam = f.beam;
  if (f.noise_opt->count()) cfg.noise = parse_noise_mode(f.noise);
  if (f.fixed_opt->count()) cfg.fixed_length = f.fixed_length == "on";
  validate(cfg);
  return cfg;
}

fs::path output_dir(const SharedFlags& f) {
  fs::path dir(f.out);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("failed writing " + path.string());
}

std::string config_comment(const TrainConfig& cfg) {
  std::string s;
  for (const auto& [k, v] : config_entries(cfg)) s += "# " + k + " = " + v + "\n";
  return s;
}

std::vector<Document> load_split(const std::string& path, const Vocab& vocab) {
  IngestResult r = ingest_corpus(path);
  if (r.stats.skipped) {
    std::cerr << "warning: " << path << ": skipped " << r.stats.skipped << " documents with fewer than 2 sentences\n";
  }
  if (r.documents.empty()) throw EmptyInputError(path + ": no usable documents");
  index_documents(r.documents, vocab);
  return std::move(r.documents);
}

std::string join_positions(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string fixed(double x, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

struct LoadedModel {
  Checkpoint checkpoint;
  TrainConfig config;
  PtrNet model;
};

LoadedModel load_model(const SharedFlags& f) {
  if (f.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  LoadedModel m;
  m.checkpoint = load_checkpoint(f.checkpoint);
  m.config = resolve_config(f, m.checkpoint.config);
  require_compatible(m.checkpoint, m.config);
  m.model = restore_model(m.checkpoint);
  return m;
}

Order decode_with(PtrNet& model, const Instance& inst, const TrainConfig& cfg, const std::string& decoder) {
  if (decoder == "beam") return beam_decode(model, inst, cfg.beam, cfg.decode_mode()).best;
  return greedy_decode(model, inst, cfg.decode_mode());
}

// ---- train ---------------------------------------------------------------

struct TrainFlags {
  std::string train, dev, embeddings, resume, log;
};

int cmd_train(const SharedFlags& f, const TrainFlags& t) {
  std::optional<Checkpoint> resumed;
  if (!t.resume.empty()) resumed = load_checkpoint(t.resume);
  const TrainConfig cfg = resolve_config(f, resumed ? resumed->config : TrainConfig{});
  if (resumed) require_compatible(*resumed, cfg);
  const fs::path dir = output_dir(f);
  const std::string best_path = f.checkpoint.empty() ? (dir / "model.ckpt").string() : f.checkpoint;
  const std::string last_path = (dir / "last.ckpt").string();

  IngestResult train_raw = ingest_corpus(t.train);
  if (train_raw.documents.empty()) throw EmptyInputError(t.train + ": no usable documents");
  const Vocab vocab = resumed ? resumed->vocab : build_vocab(train_raw.documents, cfg.min_count);
  index_documents(train_raw.documents, vocab);
  const std::vector<Document>& train = train_raw.documents;
  std::vector<Document> dev = t.dev.empty() ? train : load_split(t.dev, vocab);

  PtrNet model;
  AdaGradState opt;
  TrainingProgress progress;
  if (resumed) {
    model = restore_model(*resumed);
    opt = resumed->optimizer;
    progress = resumed->progress;
  } else {
    Rng rng(cfg.seed);
    std::optional<Tensor> table;
    if (!t.embeddings.empty()) {
      Rng emb_rng(cfg.seed);
      EmbeddingLoad e = load_pretrained_embeddings(t.embeddings, vocab, cfg.embedding_dim, emb_rng);
      std::cerr << "# embeddings: " << e.found << " tokens found, coverage " << fixed(e.coverage, 4) << "\n";
      table = std::move(e.table);
    }
    model = PtrNet(cfg.model_config(vocab.size()), rng, std::move(table));
    opt = make_optimizer(cfg);
  }

  const NoisePool train_pool = NoisePool::from_documents(train);
  const NoisePool dev_pool = NoisePool::from_documents(dev);
  std::ofstream log;
  if (!t.log.empty()) {
    log.open(t.log, progress.epoch ? std::ios::app : std::ios::trunc);
    if (!log) throw FormatError("cannot write log " + t.log);
    if (!progress.epoch) log << config_comment(cfg) << "epoch\tloss\tdev_pm_f\tdev_lsr_f\tdev_pmr\n";
  }

  std::cout << "epoch\tloss\tdev_pm_f\tdev_lsr_f\tdev_pmr\tseconds\n";
  for (std::size_t epoch = progress.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const EpochResult r = train_epoch(model, train, cfg, epoch, opt, &train_pool);
    EvalOptions eo;
    eo.instance = cfg.instance_options();
    eo.seed = cfg.seed;
    eo.pool = &dev_pool;
    eo.jobs = f.jobs;
    const MetricsReport dev_report = evaluate(model, dev, eo).report;
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    progress.epoch = epoch;
    if (dev_report.pm.f > progress.best_dev) {
      progress.best_dev = dev_report.pm.f;
      progress.best_epoch = epoch;
      save_checkpoint(best_path, cfg, vocab, model, opt, progress);
    }
    save_checkpoint(last_path, cfg, vocab, model, opt, progress);

    const std::string line = std::to_string(epoch) + "\t" + fixed(r.loss, 8) + "\t" + fixed(dev_report.pm.f) +
                             "\t" + fixed(dev_report.lsr.f) + "\t" + fixed(dev_report.pmr);
    std::cout << line << "\t" << fixed(seconds, 3) << std::endl;
    if (log.is_open()) log << line << std::endl;
  }
  std::cerr << "# best epoch " << progress.best_epoch << " dev pm_f " << fixed(progress.best_dev) << " -> "
            << best_path << "\n";
  return 0;
}

// ---- eval ----------------------------------------------------------------

struct EvalFlags {
  std::string test;
  std::string decoder = "greedy";
  bool gold = false;
};

int cmd_eval(const SharedFlags& f, const EvalFlags& e) {
  LoadedModel m = load_model(f);
  const auto docs = load_split(e.test, m.checkpoint.vocab);
  const NoisePool pool = NoisePool::from_documents(docs);
  EvalOptions eo;
  eo.beam = e.decoder == "beam" ? m.config.beam : 0;
  eo.instance = m.config.instance_options();
  eo.seed = m.config.seed;
  eo.pool = &pool;
  eo.gold_as_prediction = e.gold;
  eo.jobs = f.jobs;
  const MetricsReport report = evaluate(m.model, docs, eo).report;
  const ConfigEntries run{{"checkpoint", f.checkpoint},
                          {"test", e.test},
                          {"decoder", e.gold ? "gold" : e.decoder}};
  const std::string text = report_text(report, m.config, run);
  const fs::path dir = output_dir(f);
  write_file(dir / "report.txt", text);
  write_file(dir / "report.json", report_json(report, m.config, run));
  std::cout << text;
  return 0;
}

// ---- decode --------------------------------------------------------------

struct DecodeFlags {
  std::string input;
  std::string decoder = "greedy";
};

int cmd_decode(const SharedFlags& f, const DecodeFlags& d) {
  LoadedModel m = load_model(f);
  const auto docs = load_split(d.input, m.checkpoint.vocab);
  const NoisePool pool = NoisePool::from_documents(docs);
  const auto instances =
      make_instances(docs, mix_seed(m.config.seed, kEvalStream), m.config.instance_options(), &pool);
  std::vector<Order> preds(instances.size());
  parallel_for(instances.size(), f.jobs,
               [&](std::size_t i) { preds[i] = decode_with(m.model, instances[i], m.config, d.decoder); });
  std::string out = config_comment(m.config) + "doc_id\tgold\tpredicted\tstopped\tlog_prob\tnoise_position\n";
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const Instance& inst = instances[i];
    out += inst.doc_id + "\t" + join_positions(inst.target.positions) + "\t" + join_positions(preds[i].positions) +
           "\t" + (preds[i].stopped ? "yes" : "no") + "\t" + format_double(preds[i].log_prob) + "\t" +
           (inst.noise_position ? std::to_string(*inst.noise_position) : "-") + "\n";
  }
  write_file(output_dir(f) / "decode.tsv", out);
  std::cout << out;
  return 0;
}

// ---- saliency ------------------------------------------------------------

struct SaliencyFlags {
  std::string input;
  std::size_t doc = 0;
  std::string decoder = "greedy";
};

std::string html_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

int cmd_saliency(const SharedFlags& f, const SaliencyFlags& s) {
  LoadedModel m = load_model(f);
  const auto docs = load_split(s.input, m.checkpoint.vocab);
  if (s.doc >= docs.size()) {
    throw IndexError("--doc " + std::to_string(s.doc) + " out of range (" + std::to_string(docs.size()) + " documents)");
  }
  const NoisePool pool = NoisePool::from_documents(docs);
  const Instance inst = make_instance(docs[s.doc], mix_seed(m.config.seed, kEvalStream), m.config.instance_options(), &pool);
  const Order pred = decode_with(m.model, inst, m.config, s.decoder);
  const std::size_t steps = pred.size() + (pred.stopped ? 1 : 0);

  std::string tsv = config_comment(m.config) + "# doc_id = " + inst.doc_id + "\n# predicted = " +
                    join_positions(pred.positions) + (pred.stopped ? ",stop" : "") + "\n" +
                    "step\tchoice\tprobability\tsentence\tword_index\tword\tscore\tnormalized\n";
  std::string html =
      "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>saliency " + html_escape(inst.doc_id) +
      "</title>\n<style>body{font-family:sans-serif;margin:2em}"
      "span.w{padding:1px 2px;margin:1px;border-radius:2px}"
      "div.s{margin:2px 0}div.s.chosen{outline:2px solid #333}"
      "table{border-collapse:collapse}td{padding:2px 6px;vertical-align:top}</style></head><body>\n<h1>" +
      html_escape(inst.doc_id) + "</h1>\n<p>predicted order: " + join_positions(pred.positions) +
      (pred.stopped ? ", stop" : "") + "</p>\n";
  for (std::size_t step = 0; step < steps; ++step) {
    const Saliency sal = saliency(m.model, inst, pred, step);
    const auto intensity = normalized_saliency(sal);
    const std::string choice = sal.choice == inst.size() ? "stop" : std::to_string(sal.choice);
    html += "<h2>step " + std::to_string(step + 1) + ": choose " + choice + " (p = " + fixed(sal.probability, 4) +
            ")</h2>\n";
    for (std::size_t j = 0; j < sal.scores.size(); ++j) {
      html += std::string("<div class=\"s") + (j == sal.choice ? " chosen" : "") + "\">" + std::to_string(j) + ": ";
      for (std::size_t k = 0; k < sal.scores[j].size(); ++k) {
        const double score = sal.scores[j][k];
        const double norm = intensity[j][k];
        const std::string& word = inst.inputs[j].words[k];
        tsv += std::to_string(step) + "\t" + choice + "\t" + format_double(sal.probability) + "\t" +
               std::to_string(j) + "\t" + std::to_string(k) + "\t" + word + "\t" + format_double(score) + "\t" +
               format_double(norm) + "\n";
        html += "<span class=\"w\" title=\"" + fixed(score, 8) + "\" style=\"background:rgba(220,40,40," +
                fixed(norm, 4) + ")\">" + html_escape(word) + "</span> ";
      }
      html += "</div>\n";
    }
  }
  html += "</body></html>\n";
  const fs::path dir = output_dir(f);
  write_file(dir / "saliency.tsv", tsv);
  write_file(dir / "saliency.html", html);
  std::cout << tsv;
  return 0;
}

// ---- oracle --------------------------------------------------------------

struct OracleFlags {
  std::string input;
  std::vector<std::size_t> beams{1, 2, 4, 8, 16, 32, 64};
};

int cmd_oracle(const SharedFlags& f, const OracleFlags& o) {
  LoadedModel m = load_model(f);
  const auto docs = load_split(o.input, m.checkpoint.vocab);
  const NoisePool pool = NoisePool::from_documents(docs);
  const auto instances =
      make_instances(docs, mix_seed(m.config.seed, kEvalStream), m.config.instance_options(), &pool);
  std::vector<Positions> golds;
  for (const auto& inst : instances) golds.push_back(inst.target.positions);

  std::string out = config_comment(m.config) + "b\tpm_f\tlsr_f\tpmr\toracle_pm_f\toracle_lsr_f\toracle_pmr\n";
  for (std::size_t b : o.beams) {
    if (b == 0) throw ConfigError("beam sizes must be >= 1");
    std::vector<Positions> decoded(instances.size()), best_pm(instances.size()), best_lsr(instances.size()),
        best_pmr(instances.size());
    parallel_for(instances.size(), f.jobs, [&](std::size_t i) {
      const BeamResult r = beam_decode(m.model, instances[i], b, m.config.decode_mode());
      decoded[i] = r.best.positions;
      best_pm[i] = oracle_in_beam(r.beam, instances[i].target, OracleMetric::pm_f).best.positions;
      best_lsr[i] = oracle_in_beam(r.beam, instances[i].target, OracleMetric::lsr_f).best.positions;
      best_pmr[i] = oracle_in_beam(r.beam, instances[i].target, OracleMetric::pmr).best.positions;
    });
    const MetricsReport dec = evaluate_orders(decoded, golds);
    out += std::to_string(b) + "\t" + fixed(dec.pm.f) + "\t" + fixed(dec.lsr.f) + "\t" + fixed(dec.pmr) + "\t" +
           fixed(evaluate_orders(best_pm, golds).pm.f) + "\t" + fixed(evaluate_orders(best_lsr, golds).lsr.f) +
           "\t" + fixed(evaluate_orders(best_pmr, golds).pmr) + "\n";
  }
  write_file(output_dir(f) / "oracle.tsv", out);
  std::cout << out;
  return 0;
}

// ---- stats ---------------------------------------------------------------

int cmd_stats(const std::vector<std::string>& paths) {
  std::cout << "split\tN\tS_Avg\tW_Avg\tskipped\n";
  for (const auto& path : paths) {
    const IngestResult r = ingest_corpus(path);
    if (r.stats.documents == 0) std::cerr << "warning: " << path << ": no documents\n";
    std::cout << path << "\t" << r.stats.documents << "\t" << fixed(r.stats.avg_sentences, 2) << "\t"
              << fixed(r.stats.avg_words, 2) << "\t" << r.stats.skipped << "\n";
  }
  return 0;
}

// ---- synth ---------------------------------------------------------------

struct SynthFlags {
  SyntheticOptions options;
  std::size_t held_out = 100;
  std::string out = ".";
};

int cmd_synth(const SynthFlags& s) {
  if (s.held_out >= s.options.documents) throw ConfigError("--held-out must be smaller than --documents");
  const auto docs = synthetic_documents(s.options);
  const std::size_t n_train = docs.size() - s.held_out;
  const std::vector<std::vector<std::string>> train(docs.begin(), docs.begin() + static_cast<std::ptrdiff_t>(n_train));
  const std::vector<std::vector<std::string>> held(docs.begin() + static_cast<std::ptrdiff_t>(n_train), docs.end());
  fs::create_directories(s.out);
  std::ostringstream a, b;
  write_corpus(a, train);
  write_corpus(b, held);
  write_file(fs::path(s.out) / "train.txt", a.str());
  write_file(fs::path(s.out) / "heldout.txt", b.str());
  std::cout << "train\t" << train.size() << "\nheldout\t" << held.size() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sentence ordering with pointer networks"};
  app.require_subcommand(1);

  std::map<std::string, SharedFlags> shared;
  auto sub = [&](const std::string& name, const std::string& desc) {
    CLI::App* cmd = app.add_subcommand(name, desc);
    add_shared(cmd, shared[name]);
    return cmd;
  };

  TrainFlags tf;
  CLI::App* train = sub("train", "train a model");
  train->add_option("--train", tf.train, "training corpus")->required()->check(CLI::ExistingFile);
  train->add_option("--dev", tf.dev, "development corpus")->check(CLI::ExistingFile);
  train->add_option("--embeddings", tf.embeddings, "pretrained embeddings")->check(CLI::ExistingFile);
  train->add_option("--resume", tf.resume, "continue from a checkpoint")->check(CLI::ExistingFile);
  train->add_option("--log", tf.log, "training log file");

  EvalFlags ef;
  CLI::App* eval = sub("eval", "evaluate a checkpoint");
  eval->add_option("--test", ef.test, "evaluation corpus")->required()->check(CLI::ExistingFile);
  eval->add_option("--decoder", ef.decoder, "greedy or beam")->check(CLI::IsMember({"greedy", "beam"}));
  eval->add_flag("--gold-as-prediction", ef.gold, "score gold orders against themselves");

  DecodeFlags df;
  CLI::App* decode = sub("decode", "decode orders for a corpus");
  decode->add_option("--input", df.input, "corpus")->required()->check(CLI::ExistingFile);
  decode->add_option("--decoder", df.decoder, "greedy or beam")->check(CLI::IsMember({"greedy", "beam"}));

  SaliencyFlags sf;
  CLI::App* sal = sub("saliency", "word saliency report for one document");
  sal->add_option("--input", sf.input, "corpus")->required()->check(CLI::ExistingFile);
  sal->add_option("--doc", sf.doc, "document index in the corpus");
  sal->add_option("--decoder", sf.decoder, "greedy or beam")->check(CLI::IsMember({"greedy", "beam"}));

  OracleFlags of;
  CLI::App* oracle = sub("oracle", "oracle-in-beam sweep");
  oracle->add_option("--input", of.input, "corpus")->required()->check(CLI::ExistingFile);
  oracle->add_option("--beams", of.beams, "beam sizes")->delimiter(',');

  std::vector<std::string> stats_paths;
  CLI::App* stats = app.add_subcommand("stats", "corpus statistics");
  stats->add_option("paths", stats_paths, "corpus files")->required()->check(CLI::ExistingFile);

  SynthFlags yf;
  CLI::App* synth = app.add_subcommand("synth", "write the synthetic ordinal-cue corpus");
  synth->add_option("--documents", yf.options.documents, "total documents");
  synth->add_option("--held-out", yf.held_out, "documents reserved for the held-out split");
  synth->add_option("--sentences", yf.options.sentences, "sentences per document");
  synth->add_option("--topics", yf.options.topics, "number of topics");
  synth->add_option("--seed", yf.options.seed, "generator seed");
  synth->add_option("--out", yf.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*train) return cmd_train(shared["train"], tf);
    if (*eval) return cmd_eval(shared["eval"], ef);
    if (*decode) return cmd_decode(shared["decode"], df);
    if (*sal) return cmd_saliency(shared["saliency"], sf);
    if (*oracle) return cmd_oracle(shared["oracle"], of);
    if (*stats) return cmd_stats(stats_paths);
    if (*synth) return cmd_synth(yf);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "error: " << msg << "\n";
    return 1;
  }
  return 1;
}
