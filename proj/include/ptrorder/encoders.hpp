#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ptrorder/corpus.hpp"
#include "ptrorder/graph.hpp"
#include "ptrorder/random.hpp"

namespace ptrorder {

enum class EncoderKind { cbow, cnn, lstm };

inline const char* to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::cbow: return "cbow";
    case EncoderKind::cnn: return "cnn";
    case EncoderKind::lstm: return "lstm";
  }
  return "?";
}

inline EncoderKind parse_encoder_kind(std::string_view s) {
  if (s == "cbow") return EncoderKind::cbow;
  if (s == "cnn") return EncoderKind::cnn;
  if (s == "lstm") return EncoderKind::lstm;
  throw ConfigError("unknown encoder '" + std::string(s) + "' (expected cbow, cnn or lstm)");
}

struct EncoderConfig {
  EncoderKind kind = EncoderKind::lstm;
  std::size_t embedding_dim = 100;
  std::vector<std::size_t> filter_lengths{3, 4, 5};
  std::size_t feature_maps = 128;
  std::size_t lstm_hidden = 200;

  std::size_t output_dim() const {
    switch (kind) {
      case EncoderKind::cbow: return embedding_dim;
      case EncoderKind::cnn: return feature_maps * filter_lengths.size();
      case EncoderKind::lstm: return lstm_hidden;
    }
    return 0;
  }
};

constexpr double kInitRange = 0.08;

inline Tensor uniform_tensor(Shape shape, double range, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-range, range);
  return t;
}

// Gate weights are packed as (input, output, forget, candidate) blocks of
// hidden_dim columns each; rows are [x; h_prev].
struct LstmCell {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Param weight;
  Param bias;

  static LstmCell make(const std::string& name, std::size_t input_dim, std::size_t hidden_dim,
                       Rng& rng) {
    LstmCell cell;
    cell.input_dim = input_dim;
    cell.hidden_dim = hidden_dim;
    cell.weight = Param(name + ".weight",
                        uniform_tensor({input_dim + hidden_dim, 4 * hidden_dim}, kInitRange, rng));
    Tensor b({4 * hidden_dim});
    for (std::size_t i = 0; i < hidden_dim; ++i) b[2 * hidden_dim + i] = 1.0;
    cell.bias = Param(name + ".bias", std::move(b));
    return cell;
  }
};

struct LstmState {
  Var h;
  Var c;
};

inline LstmState zero_state(Graph& g, std::size_t hidden_dim) {
  return {g.constant(Tensor({hidden_dim})), g.constant(Tensor({hidden_dim}))};
}

// One LSTM step:
//   [i; o; f; c~] = [sig; sig; sig; tanh](W^T [x; h_prev] + b)
//   c = c_prev * f + c~ * i,   h = o * tanh(c)
inline LstmState lstm_step(Graph& g, LstmCell& cell, Var x, LstmState prev) {
  const std::size_t d = cell.hidden_dim;
  if (g.value(x).size() != cell.input_dim || g.value(prev.h).size() != d ||
      g.value(prev.c).size() != d) {
    throw DimensionError("lstm_step: input " + shape_string(g.value(x).shape()) + ", state " +
                         shape_string(g.value(prev.h).shape()) + " for cell " +
                         std::to_string(cell.input_dim) + "->" + std::to_string(d));
  }
  const Var xh = g.concat({x, prev.h});
  const Var gates = g.affine(xh, g.param(cell.weight), g.param(cell.bias));
  const Var in = g.sigmoid(g.slice(gates, 0, d));
  const Var out = g.sigmoid(g.slice(gates, d, d));
  const Var forget = g.sigmoid(g.slice(gates, 2 * d, d));
  const Var cand = g.tanh(g.slice(gates, 3 * d, d));
  const Var c = g.add(g.mul(prev.c, forget), g.mul(cand, in));
  const Var h = g.mul(out, g.tanh(c));
  return {h, c};
}

struct ConvFilter {
  std::size_t length = 0;
  Param weight;  // [(embedding_dim * length) x feature_maps]
  Param bias;    // [feature_maps]
};

// Trainable parameters of the sentence encoder, excluding the embedding
// table (owned by the model so every encoder kind shares it).
struct SentenceEncoder {
  EncoderConfig config;
  std::vector<ConvFilter> filters;
  std::optional<LstmCell> lstm;

  static SentenceEncoder make(const EncoderConfig& cfg, Rng& rng) {
    SentenceEncoder enc;
    enc.config = cfg;
    if (cfg.kind == EncoderKind::cnn) {
      if (cfg.filter_lengths.empty()) throw ConfigError("cnn encoder needs at least one filter length");
      for (std::size_t len : cfg.filter_lengths) {
        ConvFilter f;
        f.length = len;
        const std::string name = "cnn" + std::to_string(len);
        f.weight = Param(name + ".weight",
                         uniform_tensor({cfg.embedding_dim * len, cfg.feature_maps}, kInitRange, rng));
        f.bias = Param(name + ".bias", Tensor({cfg.feature_maps}));
        enc.filters.push_back(std::move(f));
      }
    } else if (cfg.kind == EncoderKind::lstm) {
      enc.lstm = LstmCell::make("sentence_lstm", cfg.embedding_dim, cfg.lstm_hidden, rng);
    }
    return enc;
  }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (auto& f : filters) {
      out.push_back(&f.weight);
      out.push_back(&f.bias);
    }
    if (lstm) {
      out.push_back(&lstm->weight);
      out.push_back(&lstm->bias);
    }
    return out;
  }
};

// Records the per-occurrence word embedding nodes of a sentence, so callers
// can read gradients with respect to them. When `offsets` is set, each
// occurrence's embedding is shifted by the matching constant first.
struct WordTap {
  std::vector<Var> words;
  const std::vector<Tensor>* offsets = nullptr;
};

inline std::vector<Var> embed_words(Graph& g, Var embeddings, std::span<const TokenId> tokens,
                                    WordTap* tap) {
  if (tokens.empty()) throw EmptyInputError("sentence encoder: empty sentence");
  if (tap && tap->offsets && tap->offsets->size() != tokens.size()) {
    throw DimensionError("sentence encoder: offset count does not match sentence length");
  }
  std::vector<Var> out;
  out.reserve(tokens.size());
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    Var w = g.lookup(embeddings, tokens[k]);
    if (tap && tap->offsets) w = g.add(w, g.constant((*tap->offsets)[k]));
    out.push_back(w);
  }
  if (tap) tap->words = out;
  return out;
}

// Mean of the word embeddings.
inline Var encode_cbow(Graph& g, Var embeddings, std::span<const TokenId> tokens,
                       WordTap* tap = nullptr) {
  const auto words = embed_words(g, embeddings, tokens, tap);
  if (words.size() == 1) return words[0];
  return g.mean_rows(g.stack_rows(words));
}

// Per filter length: tanh(W^T window + b) over every window of consecutive
// embeddings, max-pooled over positions. Sentences shorter than a filter are
// right-padded with zero rows to one full window. Pooled vectors are
// concatenated in filter order.
inline Var encode_cnn(Graph& g, Var embeddings, std::vector<ConvFilter>& filters,
                      std::span<const TokenId> tokens, WordTap* tap = nullptr) {
  const auto words = embed_words(g, embeddings, tokens, tap);
  const std::size_t d = g.value(words[0]).size();
  std::vector<Var> pooled;
  for (ConvFilter& f : filters) {
    std::vector<Var> padded = words;
    while (padded.size() < f.length) padded.push_back(g.constant(Tensor({d})));
    const Var w = g.param(f.weight);
    const Var b = g.param(f.bias);
    std::vector<Var> feats;
    for (std::size_t k = 0; k + f.length <= padded.size(); ++k) {
      const std::span<const Var> window(padded.data() + k, f.length);
      feats.push_back(g.tanh(g.affine(g.concat(window), w, b)));
    }
    pooled.push_back(feats.size() == 1 ? feats[0] : g.max_over_time(g.stack_rows(feats)));
  }
  return g.concat(pooled);
}

// Final hidden state of an LSTM run left to right from zero state.
inline Var encode_lstm(Graph& g, Var embeddings, LstmCell& cell, std::span<const TokenId> tokens,
                       WordTap* tap = nullptr) {
  const auto words = embed_words(g, embeddings, tokens, tap);
  LstmState s = zero_state(g, cell.hidden_dim);
  for (Var w : words) s = lstm_step(g, cell, w, s);
  return s.h;
}

inline Var encode_sentence(Graph& g, SentenceEncoder& enc, Var embeddings,
                           std::span<const TokenId> tokens, WordTap* tap = nullptr) {
  switch (enc.config.kind) {
    case EncoderKind::cbow: return encode_cbow(g, embeddings, tokens, tap);
    case EncoderKind::cnn: return encode_cnn(g, embeddings, enc.filters, tokens, tap);
    case EncoderKind::lstm: return encode_lstm(g, embeddings, *enc.lstm, tokens, tap);
  }
  throw Error("encode_sentence: unknown encoder kind");
}

}  // namespace ptrorder
