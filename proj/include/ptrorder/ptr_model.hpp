#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ptrorder/corpus.hpp"
#include "ptrorder/encoders.hpp"
#include "ptrorder/graph.hpp"
#include "ptrorder/order.hpp"
#include "ptrorder/random.hpp"

namespace ptrorder {

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t hidden = 200;  // state size of the pointer encoder/decoder
  std::size_t vocab_size = 2;
};

// Pointer network over sentence encodings.
//
//   e_j = LSTM(Enc(s_j), e_{j-1}), e_0 = 0                 context encoder
//   d_i = LSTM(x_i, d_{i-1}),      d_0 = (h, c) of e_n      decoder
//   u_j = v^T tanh(W^T [e_j; d_i])                          attention logit
//
// x_1 is a learned start vector and x_i = Enc(s_{o_{i-1}}) afterwards. In
// variable-length mode a learned stop key joins the candidates.
class PtrNet {
 public:
  PtrNet() = default;

  // Parameters are drawn from rng in a fixed order. If `embeddings` is given
  // it replaces the random table (after the same number of draws, so the
  // other parameters do not depend on it).
  PtrNet(const ModelConfig& cfg, Rng& rng, std::optional<Tensor> embeddings = std::nullopt)
      : config_(cfg) {
    const std::size_t de = cfg.encoder.embedding_dim;
    Tensor table = random_embeddings(cfg.vocab_size, de, rng);
    if (embeddings) {
      if (embeddings->shape() != table.shape()) {
        throw DimensionError("PtrNet: embedding table " + shape_string(embeddings->shape()) +
                             " does not match " + shape_string(table.shape()));
      }
      table = std::move(*embeddings);
    }
    embeddings_ = Param("embeddings", std::move(table));
    sentence_ = SentenceEncoder::make(cfg.encoder, rng);
    const std::size_t enc_dim = cfg.encoder.output_dim();
    const std::size_t h = cfg.hidden;
    context_ = LstmCell::make("context_lstm", enc_dim, h, rng);
    decoder_ = LstmCell::make("decoder_lstm", enc_dim, h, rng);
    attn_w_ = Param("attention.W", uniform_tensor({2 * h, h}, kInitRange, rng));
    attn_v_ = Param("attention.v", uniform_tensor({h}, kInitRange, rng));
    start_ = Param("start", uniform_tensor({enc_dim}, kInitRange, rng));
    stop_ = Param("stop", uniform_tensor({h}, kInitRange, rng));
  }

  PtrNet(const PtrNet&) = default;
  PtrNet& operator=(const PtrNet&) = default;
  PtrNet(PtrNet&&) = default;
  PtrNet& operator=(PtrNet&&) = default;

  const ModelConfig& config() const { return config_; }
  std::size_t hidden() const { return config_.hidden; }

  Param& embeddings() { return embeddings_; }
  SentenceEncoder& sentence_encoder() { return sentence_; }
  LstmCell& context_cell() { return context_; }
  LstmCell& decoder_cell() { return decoder_; }
  Param& attention_w() { return attn_w_; }
  Param& attention_v() { return attn_v_; }
  Param& start_vector() { return start_; }
  Param& stop_vector() { return stop_; }

  // Every trainable parameter, in a fixed order with unique names.
  std::vector<Param*> params() {
    std::vector<Param*> out{&embeddings_};
    for (Param* p : sentence_.params()) out.push_back(p);
    out.insert(out.end(), {&context_.weight, &context_.bias, &decoder_.weight, &decoder_.bias,
                           &attn_w_, &attn_v_, &start_, &stop_});
    return out;
  }

  void zero_grads() {
    for (Param* p : params()) p->zero_grad();
  }

  double squared_norm() {
    double s = 0.0;
    for (Param* p : params()) s += p->value.squared_norm();
    return s;
  }

 private:
  ModelConfig config_;
  Param embeddings_;
  SentenceEncoder sentence_;
  LstmCell context_;
  LstmCell decoder_;
  Param attn_w_;
  Param attn_v_;
  Param start_;
  Param stop_;
};

// Graph nodes for one instance after the context encoder has run.
struct EncodedInstance {
  std::vector<Var> sentences;  // Enc(s_j)
  std::vector<Var> states;     // e_1 .. e_n (hidden part)
  LstmState final;             // (h, c) after e_n, or zeros for n = 0
  std::vector<Var> keys;       // W[0:h]^T e_j, cached for attention
  Var stop_key;                // W[0:h]^T stop
  std::vector<WordTap> taps;   // per-sentence word embedding nodes

  std::size_t size() const { return sentences.size(); }
};

// Optional per-word embedding offsets, [sentence][word], used by saliency
// finite-difference probes.
using WordOffsets = std::vector<std::vector<Tensor>>;

inline EncodedInstance encode_document(Graph& g, PtrNet& model, const Instance& inst,
                                       const WordOffsets* offsets = nullptr) {
  EncodedInstance enc;
  const Var emb = g.param(model.embeddings());
  const Var w = g.param(model.attention_w());
  const std::size_t n = inst.size();
  enc.taps.resize(n);
  LstmState s = zero_state(g, model.hidden());
  for (std::size_t j = 0; j < n; ++j) {
    if (offsets) enc.taps[j].offsets = &(*offsets)[j];
    const Var x = encode_sentence(g, model.sentence_encoder(), emb, inst.inputs[j].ids, &enc.taps[j]);
    enc.sentences.push_back(x);
    s = lstm_step(g, model.context_cell(), x, s);
    enc.states.push_back(s.h);
    enc.keys.push_back(g.linear(s.h, w, 0));
  }
  enc.final = s;
  enc.stop_key = g.linear(g.param(model.stop_vector()), w, 0);
  return enc;
}

// Decoder state before the first prediction: d_0 = e_n (hidden and cell).
inline LstmState initial_decoder_state(const EncodedInstance& enc) { return enc.final; }

// d_next = LSTM(input, d_prev), where input is the start vector when nothing
// has been chosen yet and Enc(s_chosen) otherwise.
inline LstmState advance_decoder(Graph& g, PtrNet& model, const EncodedInstance& enc,
                                 LstmState prev, std::optional<std::size_t> chosen) {
  Var input;
  if (chosen) {
    if (*chosen >= enc.size()) {
      throw IndexError("advance_decoder: position " + std::to_string(*chosen) + " outside " +
                       std::to_string(enc.size()) + " inputs");
    }
    input = enc.sentences[*chosen];
  } else {
    input = g.param(model.start_vector());
  }
  return lstm_step(g, model.decoder_cell(), input, prev);
}

// Attention logits u_j = v^T tanh(W^T [e_j; d]) for j < n, plus the stop
// slot at index n when allow_stop.
inline Var attention_logits(Graph& g, PtrNet& model, const EncodedInstance& enc, Var d,
                            bool allow_stop) {
  const Var w = g.param(model.attention_w());
  const Var v = g.param(model.attention_v());
  const Var query = g.linear(d, w, model.hidden());
  std::vector<Var> logits;
  for (Var key : enc.keys) logits.push_back(g.dot(v, g.tanh(g.add(key, query))));
  if (allow_stop) logits.push_back(g.dot(v, g.tanh(g.add(enc.stop_key, query))));
  if (logits.empty()) throw InvalidMaskError("attention_logits: no candidates");
  return g.concat(logits);
}

// Distribution over candidates at one decoder step.
inline Var decode_step(Graph& g, PtrNet& model, const EncodedInstance& enc, LstmState d,
                       const Mask& mask, bool allow_stop) {
  return g.masked_softmax(attention_logits(g, model, enc, d.h, allow_stop), mask);
}

inline void validate_target(const Order& target, std::size_t n) {
  for (std::size_t p : target.positions) {
    if (p >= n) {
      throw IndexError("target position " + std::to_string(p) + " outside " + std::to_string(n) +
                       " inputs");
    }
  }
  if (!distinct_positions(target.positions)) {
    throw InvariantError("target repeats a position");
  }
}

// Teacher-forced sum of log P(o_i | o_<i, s); includes the stop step when
// target.stopped.
inline Var sequence_log_prob(Graph& g, PtrNet& model, const EncodedInstance& enc,
                             const Order& target) {
  const std::size_t n = enc.size();
  validate_target(target, n);
  const bool allow_stop = target.stopped;
  Mask mask(n + (allow_stop ? 1 : 0), false);
  LstmState d = initial_decoder_state(enc);
  std::optional<std::size_t> prev;
  Var total;
  auto accumulate = [&](std::size_t choice) {
    d = advance_decoder(g, model, enc, d, prev);
    const Var lp = g.log_prob_at(attention_logits(g, model, enc, d.h, allow_stop), mask, choice);
    total = total.valid() ? g.add(total, lp) : lp;
  };
  for (std::size_t p : target.positions) {
    accumulate(p);
    mask[p] = true;
    prev = p;
  }
  if (allow_stop) accumulate(n);
  if (!total.valid()) total = g.constant(Tensor::scalar(0.0));
  return total;
}

inline Var sequence_log_prob(Graph& g, PtrNet& model, const Instance& inst, const Order& target) {
  const EncodedInstance enc = encode_document(g, model, inst);
  return sequence_log_prob(g, model, enc, target);
}

inline double sequence_log_prob(PtrNet& model, const Instance& inst, const Order& target) {
  Graph g(false);
  return g.scalar(sequence_log_prob(g, model, inst, target));
}

// J = -(1/m) sum_i log P(target_i | inputs_i) + (lambda/2) ||theta||^2.
// With compute_grad, dJ/dtheta is added to every Param::grad.
inline double batch_loss(PtrNet& model, std::span<const Instance> batch, double lambda,
                         bool compute_grad) {
  if (batch.empty()) throw EmptyInputError("loss: empty batch");
  const double inv_m = 1.0 / static_cast<double>(batch.size());
  double data = 0.0;
  for (const Instance& inst : batch) {
    Graph g(compute_grad);
    const Var lp = sequence_log_prob(g, model, inst, inst.target);
    data -= g.scalar(lp) * inv_m;
    if (compute_grad) g.backward(lp, -inv_m);
  }
  double reg = 0.0;
  if (lambda != 0.0) {
    for (Param* p : model.params()) {
      reg += p->value.squared_norm();
      if (compute_grad) {
        for (std::size_t i = 0; i < p->value.size(); ++i) p->grad[i] += lambda * p->value[i];
      }
    }
    reg *= 0.5 * lambda;
  }
  return data + reg;
}

// Probability the model assigns to `choice` after the decoder has consumed
// `prefix`, and the graph nodes needed to differentiate it.
struct ChoiceGraph {
  Graph graph;
  EncodedInstance encoded;
  Var probability;
};

inline ChoiceGraph choice_probability_graph(PtrNet& model, const Instance& inst,
                                            const std::vector<std::size_t>& prefix,
                                            std::size_t choice, bool allow_stop,
                                            const WordOffsets* offsets = nullptr,
                                            bool record = true) {
  ChoiceGraph cg{Graph(record), {}, {}};
  Graph& g = cg.graph;
  cg.encoded = encode_document(g, model, inst, offsets);
  const std::size_t n = inst.size();
  Order pre;
  pre.positions = prefix;
  validate_target(pre, n);
  Mask mask(n + (allow_stop ? 1 : 0), false);
  LstmState d = initial_decoder_state(cg.encoded);
  std::optional<std::size_t> prev;
  for (std::size_t p : prefix) {
    d = advance_decoder(g, model, cg.encoded, d, prev);
    mask[p] = true;
    prev = p;
  }
  d = advance_decoder(g, model, cg.encoded, d, prev);
  const Var probs = decode_step(g, model, cg.encoded, d, mask, allow_stop);
  if (choice >= mask.size() || mask[choice]) {
    throw IndexError("saliency: choice " + std::to_string(choice) + " is not a valid candidate");
  }
  cg.probability = g.pick(probs, choice);
  return cg;
}

inline double choice_probability(PtrNet& model, const Instance& inst,
                                 const std::vector<std::size_t>& prefix, std::size_t choice,
                                 bool allow_stop, const WordOffsets* offsets = nullptr) {
  ChoiceGraph cg = choice_probability_graph(model, inst, prefix, choice, allow_stop, offsets, false);
  return cg.graph.scalar(cg.probability);
}

struct Saliency {
  std::size_t step = 0;
  std::size_t choice = 0;  // input position, or n for the stop action
  double probability = 0.0;
  std::vector<std::vector<double>> scores;     // [input sentence][word]
  std::vector<std::vector<Tensor>> gradients;  // d P / d embedding, same layout
};

// Word importance for decode step `step` of a predicted order: the Euclidean
// norm of the gradient of the chosen candidate's probability with respect to
// each word occurrence's embedding. Step == predicted.size() addresses the
// stop action when predicted.stopped.
inline Saliency saliency(PtrNet& model, const Instance& inst, const Order& predicted,
                         std::size_t step) {
  const std::size_t n = inst.size();
  if (step > predicted.size() || (step == predicted.size() && !predicted.stopped)) {
    throw IndexError("saliency: step " + std::to_string(step) + " outside predicted order");
  }
  std::vector<std::size_t> prefix(predicted.positions.begin(),
                                  predicted.positions.begin() + static_cast<std::ptrdiff_t>(step));
  const std::size_t choice = step < predicted.size() ? predicted.positions[step] : n;
  ChoiceGraph cg = choice_probability_graph(model, inst, prefix, choice, predicted.stopped);
  Graph& g = cg.graph;
  // Only the word-node gradients are wanted; keep parameter grads intact.
  std::vector<Tensor> saved;
  for (Param* p : model.params()) saved.push_back(p->grad);
  g.backward(cg.probability);
  auto params = model.params();
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->grad = std::move(saved[k]);

  Saliency out;
  out.step = step;
  out.choice = choice;
  out.probability = g.scalar(cg.probability);
  for (const WordTap& tap : cg.encoded.taps) {
    std::vector<double> row;
    std::vector<Tensor> grads;
    for (Var w : tap.words) {
      Tensor gr = g.grad(w);
      row.push_back(std::sqrt(gr.squared_norm()));
      grads.push_back(std::move(gr));
    }
    out.scores.push_back(std::move(row));
    out.gradients.push_back(std::move(grads));
  }
  return out;
}

// Scores divided by the step's maximum, for display. All zeros when every
// score is zero.
inline std::vector<std::vector<double>> normalized_saliency(const Saliency& s) {
  double max_score = 0.0;
  for (const auto& row : s.scores) {
    for (double v : row) max_score = std::max(max_score, v);
  }
  auto out = s.scores;
  for (auto& row : out) {
    for (double& v : row) v = max_score > 0.0 ? v / max_score : 0.0;
  }
  return out;
}

}  // namespace ptrorder
