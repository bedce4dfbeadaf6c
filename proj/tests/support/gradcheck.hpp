#pragma once

// Central finite differences against reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "tdcount/autograd.hpp"
#include "tdcount/rng.hpp"

namespace tdc::testing {

struct GradCheckResult {
  int checked = 0;
  double max_rel_error = 0.0;
};

// Samples `n_samples` scalar entries across `params` whose analytic gradient
// is not negligible and compares d(loss)/d(entry) with a central difference.
inline GradCheckResult check_gradients(const std::function<ag::Var()>& loss, const std::vector<ag::Var>& params,
                                       int n_samples, std::uint64_t seed, double eps = 1e-6) {
  for (const auto& p : params) p->zero_grad();
  ag::backward(loss());

  struct Entry {
    std::size_t param;
    std::size_t index;
  };
  std::vector<Entry> candidates;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor& g = params[p]->grad;
    if (g.empty()) continue;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (std::abs(g[i]) > 1e-8) candidates.push_back({p, i});
  }
  Rng rng(seed);
  for (std::size_t i = candidates.size(); i > 1; --i)
    std::swap(candidates[i - 1], candidates[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  if (candidates.size() > static_cast<std::size_t>(n_samples)) candidates.resize(static_cast<std::size_t>(n_samples));

  GradCheckResult result;
  for (const Entry& e : candidates) {
    double& w = params[e.param]->value[e.index];
    const double analytic = params[e.param]->grad[e.index];
    const double saved = w;
    w = saved + eps;
    const double up = loss()->value[0];
    w = saved - eps;
    const double down = loss()->value[0];
    w = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-7});
    result.max_rel_error = std::max(result.max_rel_error, rel);
    ++result.checked;
  }
  for (const auto& p : params) p->zero_grad();
  return result;
}

}  // namespace tdc::testing
