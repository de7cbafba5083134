#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ptrorder/graph.hpp"
#include "ptrorder/random.hpp"

namespace ptrorder {

// A scalar objective over a set of parameters. When called with true it must
// also add d(value)/d(param) into each Param::grad.
using Objective = std::function<double(bool compute_grad)>;

struct GradCheckOptions {
  double step = 1e-5;
  // Lower bound of the relative-error denominator; gradients below it are
  // compared in absolute terms, where finite-difference roundoff dominates.
  double floor = 1e-8;
  // 0 checks every coordinate; otherwise a seeded sample per parameter.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;
};

// Compares reverse-mode gradients with central differences
// (f(x+h) - f(x-h)) / 2h. Relative error uses max(|a|, |n|, floor) as the
// denominator. Parameter values and gradients are restored afterwards.
inline GradCheckResult grad_check(const Objective& f, std::span<Param* const> params,
                                  const GradCheckOptions& opts = {}) {
  std::vector<Tensor> saved_grads;
  for (Param* p : params) {
    saved_grads.push_back(p->grad);
    p->zero_grad();
  }
  const double f0 = f(true);
  if (!std::isfinite(f0)) throw NumericError("grad_check: objective is not finite");
  std::vector<Tensor> analytic;
  for (Param* p : params) analytic.push_back(p->grad);

  GradCheckResult result;
  Rng rng(opts.seed);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    std::vector<std::size_t> coords(p.value.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opts.max_coords_per_param != 0 && coords.size() > opts.max_coords_per_param) {
      rng.shuffle(coords);
      coords.resize(opts.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double original = p.value[i];
      p.value[i] = original + opts.step;
      const double fp = f(false);
      p.value[i] = original - opts.step;
      const double fm = f(false);
      p.value[i] = original;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw NumericError("grad_check: objective is not finite near " + p.name + "[" +
                           std::to_string(i) + "]");
      }
      const double numeric = (fp - fm) / (2.0 * opts.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      const double err = std::abs(a - numeric) / denom;
      ++result.coords_checked;
      if (err > result.max_rel_error || result.coords_checked == 1) {
        result.max_rel_error = err;
        result.worst_param = p.name;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->grad = saved_grads[k];
  return result;
}

// Convenience form for objectives that are a single graph output.
inline GradCheckResult grad_check(const std::function<Var(Graph&)>& build,
                                  std::span<Param* const> params,
                                  const GradCheckOptions& opts = {}) {
  Objective f = [&build](bool compute_grad) {
    Graph g(compute_grad);
    const Var out = build(g);
    const double v = g.scalar(out);
    if (compute_grad) g.backward(out);
    return v;
  };
  return grad_check(f, params, opts);
}

}  // namespace ptrorder
