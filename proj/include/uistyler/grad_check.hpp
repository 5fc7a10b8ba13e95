#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "uistyler/tensor.hpp"

namespace uistyler::ad {

// Central-difference verification of reverse-mode gradients, meant to run on
// double-precision instantiations. `build_loss` must rebuild the scalar loss
// from the current parameter values on every call.
//
// Returns max over parameter entries of |analytic - numeric| /
// max(1e-8, |analytic| + |numeric|).
template <class F>
inline double grad_check(F&& build_loss, const std::vector<Tensor<double>>& params,
                         double eps = 1e-4) {
  for (const auto& p : params)
    if (!p.requires_grad()) throw ContractError("grad_check: parameter does not require grad");

  std::vector<std::vector<double>> analytic;
  {
    Tensor<double> loss = build_loss();
    if (loss.size() != 1) throw ContractError("grad_check: loss must be scalar");
    for (auto p : params) p.zero_grad();
    backward(loss);
    for (const auto& p : params) analytic.push_back(p.grad());
  }

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = const_cast<Tensor<double>&>(params[pi]).mutable_values();
    for (size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double fp = build_loss().item();
      vals[i] = saved - eps;
      const double fm = build_loss().item();
      vals[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace uistyler::ad
