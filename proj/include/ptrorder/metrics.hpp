#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ptrorder/errors.hpp"
#include "ptrorder/order.hpp"

namespace ptrorder {

using Positions = std::vector<std::size_t>;

struct Prf {
  double p = 0.0;
  double r = 0.0;
  double f = 0.0;
};

inline double f_score(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

inline Prf make_prf(double p, double r) { return {p, r, f_score(p, r)}; }

namespace detail {

inline void require_distinct(const Positions& x, const char* what) {
  if (!distinct_positions(x)) throw InvariantError(std::string(what) + ": sequence repeats an element");
}

inline double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace detail

// Number of ordered pairs (a before b) of `pred` that appear in the same
// relative order in `gold`.
inline std::size_t shared_skip_bigrams(const Positions& pred, const Positions& gold) {
  std::unordered_map<std::size_t, std::size_t> rank;
  for (std::size_t i = 0; i < gold.size(); ++i) rank.emplace(gold[i], i);
  std::size_t shared = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    auto a = rank.find(pred[i]);
    if (a == rank.end()) continue;
    for (std::size_t j = i + 1; j < pred.size(); ++j) {
      auto b = rank.find(pred[j]);
      if (b != rank.end() && a->second < b->second) ++shared;
    }
  }
  return shared;
}

inline std::size_t pair_count(std::size_t n) { return n < 2 ? 0 : n * (n - 1) / 2; }

// Pairwise metric: precision over pred's skip-bigrams, recall over gold's.
// Every pair of pred counts in the denominator, including pairs that involve
// elements missing from gold. An empty pair set gives a zero ratio.
inline Prf pm_scores(const Positions& pred, const Positions& gold) {
  if (gold.empty()) throw EmptyInputError("pm_scores: empty gold order");
  detail::require_distinct(pred, "pm_scores");
  detail::require_distinct(gold, "pm_scores");
  const std::size_t shared = shared_skip_bigrams(pred, gold);
  return make_prf(detail::ratio(shared, pair_count(pred.size())),
                  detail::ratio(shared, pair_count(gold.size())));
}

// Longest common subsequence length (O(|a||b|) dynamic programme).
inline std::size_t lcs_length(const Positions& a, const Positions& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Longest sequence ratio: L / |pred| and L / |gold| with L the LCS length.
inline Prf lsr_scores(const Positions& pred, const Positions& gold) {
  if (gold.empty()) throw EmptyInputError("lsr_scores: empty gold order");
  detail::require_distinct(pred, "lsr_scores");
  detail::require_distinct(gold, "lsr_scores");
  const std::size_t l = lcs_length(pred, gold);
  return make_prf(detail::ratio(l, pred.size()), detail::ratio(l, gold.size()));
}

inline double pmr(std::span<const Positions> preds, std::span<const Positions> golds) {
  if (preds.size() != golds.size()) {
    throw DimensionError("pmr: " + std::to_string(preds.size()) + " predictions for " +
                         std::to_string(golds.size()) + " gold orders");
  }
  if (preds.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == golds[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

struct HeadTail {
  double head = 0.0;
  double tail = 0.0;
};

inline HeadTail head_tail(std::span<const Positions> preds, std::span<const Positions> golds) {
  if (preds.size() != golds.size()) throw DimensionError("head_tail: list length mismatch");
  if (preds.empty()) return {};
  std::size_t head = 0, tail = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    const auto& g = golds[i];
    if (g.empty()) throw EmptyInputError("head_tail: empty gold order");
    if (!p.empty() && p.front() == g.front()) ++head;
    if (!p.empty() && p.back() == g.back()) ++tail;
  }
  const double m = static_cast<double>(preds.size());
  return {static_cast<double>(head) / m, static_cast<double>(tail) / m};
}

// Scores of one (prediction, gold) pair.
struct PairScores {
  Prf pm;
  Prf lsr;
  bool exact = false;
  bool head = false;
  bool tail = false;
};

inline PairScores score_pair(const Positions& pred, const Positions& gold) {
  PairScores s;
  s.pm = pm_scores(pred, gold);
  s.lsr = lsr_scores(pred, gold);
  s.exact = pred == gold;
  s.head = !pred.empty() && pred.front() == gold.front();
  s.tail = !pred.empty() && pred.back() == gold.back();
  return s;
}

struct MetricsReport {
  Prf pm;
  Prf lsr;
  double pmr = 0.0;
  double head_acc = 0.0;
  double tail_acc = 0.0;
  std::size_t count = 0;
};

// Macro average: P and R are averaged over texts, then F is computed from the
// averaged P and R.
inline MetricsReport aggregate(std::span<const PairScores> scores) {
  if (scores.empty()) throw EmptyInputError("aggregate: no scored texts");
  MetricsReport r;
  double pm_p = 0, pm_r = 0, lsr_p = 0, lsr_r = 0;
  std::size_t exact = 0, head = 0, tail = 0;
  for (const PairScores& s : scores) {
    pm_p += s.pm.p;
    pm_r += s.pm.r;
    lsr_p += s.lsr.p;
    lsr_r += s.lsr.r;
    exact += s.exact;
    head += s.head;
    tail += s.tail;
  }
  const double m = static_cast<double>(scores.size());
  r.pm = make_prf(pm_p / m, pm_r / m);
  r.lsr = make_prf(lsr_p / m, lsr_r / m);
  r.pmr = static_cast<double>(exact) / m;
  r.head_acc = static_cast<double>(head) / m;
  r.tail_acc = static_cast<double>(tail) / m;
  r.count = scores.size();
  return r;
}

inline MetricsReport evaluate_orders(std::span<const Positions> preds, std::span<const Positions> golds) {
  if (preds.size() != golds.size()) throw DimensionError("evaluate_orders: list length mismatch");
  std::vector<PairScores> s;
  s.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) s.push_back(score_pair(preds[i], golds[i]));
  return aggregate(s);
}

}  // namespace ptrorder
