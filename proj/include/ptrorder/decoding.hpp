#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string_view>
#include <vector>

#include "ptrorder/metrics.hpp"
#include "ptrorder/order.hpp"
#include "ptrorder/ptr_model.hpp"

namespace ptrorder {

enum class DecodeMode { fixed_length, variable_length };

inline bool allows_stop(DecodeMode m) { return m == DecodeMode::variable_length; }

namespace detail {

// Step log-probabilities over all candidates (n positions, plus stop at
// index n in variable-length mode); masked entries are -inf.
inline std::vector<double> step_log_probs(Graph& g, PtrNet& model, const EncodedInstance& enc,
                                          const LstmState& d, const Mask& mask, bool allow_stop) {
  const Var logits = attention_logits(g, model, enc, d.h, allow_stop);
  return Graph::masked_log_softmax(g.value(logits), mask);
}

inline Mask make_mask(std::size_t n, const std::vector<std::size_t>& chosen, bool allow_stop) {
  Mask m(n + (allow_stop ? 1 : 0), false);
  for (std::size_t p : chosen) m[p] = true;
  return m;
}

}  // namespace detail

// Step-wise argmax. Ties go to the lowest position; the stop slot loses ties
// to any position. Fixed-length mode selects exactly n positions;
// variable-length mode runs until the stop action, which becomes the only
// candidate once every position is used.
inline Order greedy_decode(PtrNet& model, const Instance& inst, DecodeMode mode) {
  Graph g(false);
  const EncodedInstance enc = encode_document(g, model, inst);
  const std::size_t n = inst.size();
  const bool allow_stop = allows_stop(mode);
  Order out;
  LstmState d = initial_decoder_state(enc);
  std::optional<std::size_t> prev;
  while (true) {
    if (!allow_stop && out.size() == n) break;
    d = advance_decoder(g, model, enc, d, prev);
    const auto lp = detail::step_log_probs(g, model, enc, d, detail::make_mask(n, out.positions, allow_stop),
                                           allow_stop);
    std::size_t best = Var::npos;
    for (std::size_t i = 0; i < lp.size(); ++i) {
      if (std::isinf(lp[i])) continue;
      if (best == Var::npos || lp[i] > lp[best]) best = i;
    }
    out.log_prob += lp[best];
    if (best == n) {
      out.stopped = true;
      break;
    }
    out.positions.push_back(best);
    prev = best;
  }
  return out;
}

struct BeamResult {
  Order best;
  std::vector<Order> beam;  // finished candidates at termination, best first
};

// Beam search on the raw cumulative log-probability (no length
// normalization). Candidates are ranked by (log-prob desc, prefix asc) where
// the stop action sorts after every position. Finished candidates stay in the
// beam and compete with live ones; the search ends once the top candidate is
// finished.
inline BeamResult beam_decode(PtrNet& model, const Instance& inst, std::size_t beam_size,
                              DecodeMode mode) {
  if (beam_size == 0) throw ConfigError("beam_decode: beam size must be >= 1");
  struct Candidate {
    std::vector<std::size_t> prefix;
    LstmState state;
    double log_prob = 0.0;
    bool finished = false;
    bool stopped = false;
  };
  Graph g(false);
  const EncodedInstance enc = encode_document(g, model, inst);
  const std::size_t n = inst.size();
  const bool allow_stop = allows_stop(mode);

  auto key_less = [n](const Candidate& a, const Candidate& b) {
    const std::size_t la = a.prefix.size() + (a.stopped ? 1 : 0);
    const std::size_t lb = b.prefix.size() + (b.stopped ? 1 : 0);
    for (std::size_t i = 0; i < std::min(la, lb); ++i) {
      const std::size_t x = i < a.prefix.size() ? a.prefix[i] : n;
      const std::size_t y = i < b.prefix.size() ? b.prefix[i] : n;
      if (x != y) return x < y;
    }
    return la < lb;
  };
  auto better = [&](const Candidate& a, const Candidate& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return key_less(a, b);
  };

  std::vector<Candidate> beam(1);
  beam[0].state = initial_decoder_state(enc);
  if (!allow_stop && n == 0) beam[0].finished = true;

  while (!beam.front().finished) {
    std::vector<Candidate> next;
    for (const Candidate& c : beam) {
      if (c.finished) {
        next.push_back(c);
        continue;
      }
      std::optional<std::size_t> prev;
      if (!c.prefix.empty()) prev = c.prefix.back();
      const LstmState d = advance_decoder(g, model, enc, c.state, prev);
      const auto lp = detail::step_log_probs(g, model, enc, d, detail::make_mask(n, c.prefix, allow_stop),
                                             allow_stop);
      for (std::size_t a = 0; a < lp.size(); ++a) {
        if (std::isinf(lp[a])) continue;
        Candidate e;
        e.prefix = c.prefix;
        e.state = d;
        e.log_prob = c.log_prob + lp[a];
        if (a == n) {
          e.finished = e.stopped = true;
        } else {
          e.prefix.push_back(a);
          e.finished = !allow_stop && e.prefix.size() == n;
        }
        next.push_back(std::move(e));
      }
    }
    std::sort(next.begin(), next.end(), better);
    if (next.size() > beam_size) next.resize(beam_size);
    beam = std::move(next);
  }

  BeamResult result;
  for (const Candidate& c : beam) {
    if (!c.finished) continue;
    Order o;
    o.positions = c.prefix;
    o.stopped = c.stopped;
    o.log_prob = c.log_prob;
    result.beam.push_back(std::move(o));
  }
  result.best = result.beam.front();
  return result;
}

constexpr std::size_t kExhaustiveLimit = 8;

// Every valid output sequence with its log-probability: all n! permutations
// in fixed-length mode, or every distinct-position sequence of length 0..n
// followed by stop in variable-length mode. Enumeration is depth-first in
// lexicographic order.
inline std::vector<Order> enumerate_orders(PtrNet& model, const Instance& inst, DecodeMode mode) {
  const std::size_t n = inst.size();
  if (n > kExhaustiveLimit) {
    throw GuardError("exhaustive decoding is limited to " + std::to_string(kExhaustiveLimit) +
                     " inputs, got " + std::to_string(n));
  }
  Graph g(false);
  const EncodedInstance enc = encode_document(g, model, inst);
  const bool allow_stop = allows_stop(mode);
  std::vector<Order> out;
  std::vector<std::size_t> prefix;
  std::function<void(const LstmState&, double)> walk = [&](const LstmState& state, double lp_sum) {
    if (!allow_stop && prefix.size() == n) {
      out.push_back(Order{prefix, false, lp_sum});
      return;
    }
    std::optional<std::size_t> prev;
    if (!prefix.empty()) prev = prefix.back();
    const LstmState d = advance_decoder(g, model, enc, state, prev);
    const auto lp = detail::step_log_probs(g, model, enc, d, detail::make_mask(n, prefix, allow_stop),
                                           allow_stop);
    for (std::size_t a = 0; a < lp.size(); ++a) {
      if (std::isinf(lp[a])) continue;
      if (a == n) {
        out.push_back(Order{prefix, true, lp_sum + lp[a]});
        continue;
      }
      prefix.push_back(a);
      walk(d, lp_sum + lp[a]);
      prefix.pop_back();
    }
  };
  walk(initial_decoder_state(enc), 0.0);
  return out;
}

// Exact argmax over all valid sequences (ties: first in lexicographic order).
inline Order exhaustive_decode(PtrNet& model, const Instance& inst, DecodeMode mode) {
  const auto all = enumerate_orders(model, inst, mode);
  const Order* best = &all.front();
  for (const Order& o : all) {
    if (o.log_prob > best->log_prob) best = &o;
  }
  return *best;
}

enum class OracleMetric { pm_f, lsr_f, pmr };

struct OracleResult {
  Order best;
  double score = 0.0;
  bool hit = false;  // some candidate equals gold exactly
};

// Best candidate of a final beam against gold under `metric`. Ties keep the
// candidate with the higher log-probability (earlier in the beam).
inline OracleResult oracle_in_beam(const std::vector<Order>& beam, const Order& gold, OracleMetric metric) {
  if (beam.empty()) throw EmptyInputError("oracle_in_beam: empty beam");
  OracleResult r;
  bool first = true;
  for (const Order& c : beam) {
    double s = 0.0;
    switch (metric) {
      case OracleMetric::pm_f: s = pm_scores(c.positions, gold.positions).f; break;
      case OracleMetric::lsr_f: s = lsr_scores(c.positions, gold.positions).f; break;
      case OracleMetric::pmr: s = c.positions == gold.positions ? 1.0 : 0.0; break;
    }
    if (c.positions == gold.positions) r.hit = true;
    const bool take = first || s > r.score ||
                      (s == r.score && c.log_prob > r.best.log_prob);
    if (take) {
      r.best = c;
      r.score = s;
      first = false;
    }
  }
  return r;
}

}  // namespace ptrorder
