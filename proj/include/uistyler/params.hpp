#pragma once

#include <string>
#include <utility>
#include <vector>

#include "uistyler/tensor.hpp"

namespace uistyler {

// Ordered name -> tensor registry. The order is the canonical parameter
// order used by the optimizer, checkpoints, and gradient reduction.
template <class T>
struct ParamList {
  std::vector<std::pair<std::string, ad::Tensor<T>>> items;

  void add(std::string name, const ad::Tensor<T>& t) { items.emplace_back(std::move(name), t); }

  const ad::Tensor<T>& find(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return t;
    throw IntegrityError("ParamList: no parameter named '" + name + "'");
  }

  bool contains(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return true;
    return false;
  }

  long total_size() const {
    long n = 0;
    for (const auto& [_, t] : items) n += t.size();
    return n;
  }

  void zero_grads() {
    for (auto& [_, t] : items) t.zero_grad();
  }
};

namespace init {

template <class T>
inline ad::Tensor<T> xavier(const Rng& rng, const std::string& name, ad::Shape shape) {
  return ad::xavier_init<T>(shape, rng.stream(name));
}

template <class T>
inline ad::Tensor<T> zeros(ad::Shape shape) {
  auto t = ad::Tensor<T>::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

template <class T>
inline ad::Tensor<T> ones(ad::Shape shape) {
  auto t = ad::Tensor<T>::filled(std::move(shape), T(1));
  t.set_requires_grad(true);
  return t;
}

}  // namespace init

}  // namespace uistyler
