#pragma once

#include <cmath>
#include <vector>

#include "uistyler/params.hpp"

namespace uistyler {

// Standard bias-corrected Adam. State is kept per parameter in registry
// order; the step counter is shared.
template <class T>
class Adam {
 public:
  Adam(const ParamList<T>& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, t] : params.items) {
      m_.emplace_back(t.size(), T(0));
      v_.emplace_back(t.size(), T(0));
    }
  }

  long step_count() const { return t_; }

  void step(ParamList<T>& params, double lr) {
    if (params.items.size() != m_.size())
      throw ShapeError("adam: parameter count changed since state creation");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t pi = 0; pi < m_.size(); ++pi) {
      auto& tensor = params.items[pi].second;
      if (static_cast<long>(m_[pi].size()) != tensor.size())
        throw ShapeError("adam: shape mismatch for parameter '" + params.items[pi].first + "'");
      const auto& g = tensor.grad();
      if (g.empty()) continue;  // parameter never touched by backward
      auto& val = tensor.mutable_values();
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (size_t i = 0; i < val.size(); ++i) {
        m[i] = static_cast<T>(beta1_ * m[i] + (1.0 - beta1_) * g[i]);
        v[i] = static_cast<T>(beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i]);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        val[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

// Linear ramp to base_lr over warmup_steps, then inverse-sqrt decay.
inline double warmup_lr(long step, double base_lr, long warmup_steps) {
  if (warmup_steps < 1) throw ConfigError("warmup_lr: warmup_steps must be >= 1");
  if (step < 1) step = 1;
  if (step <= warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  return base_lr * std::sqrt(static_cast<double>(warmup_steps) / static_cast<double>(step));
}

}  // namespace uistyler
