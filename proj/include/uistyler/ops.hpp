#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "uistyler/tensor.hpp"

// Differentiable op library. Every op builds one node; the backprop closure
// reads self.grad and accumulates into parents that require gradients.
// Matrices are row-major throughout.

namespace uistyler::ad {

namespace detail {

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Map = Eigen::Map<EMat<T>>;
template <class T>
using CMap = Eigen::Map<const EMat<T>>;

template <class T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <class T>
inline void require_rank(const Tensor<T>& a, size_t r, const char* op) {
  if (a.shape().size() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(a.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class T>
inline Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  auto* an = a.node();
  auto* bn = b.node();
  return detail::make_node<T>(
      a.shape(), std::move(out), "add",
      [an, bn](Node<T>& self) {
        if (an->requires_grad)
          for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        if (bn->requires_grad)
          for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
      },
      a, b);
}

template <class T>
inline Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  auto* an = a.node();
  auto* bn = b.node();
  return detail::make_node<T>(
      a.shape(), std::move(out), "sub",
      [an, bn](Node<T>& self) {
        if (an->requires_grad)
          for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        if (bn->requires_grad)
          for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
      },
      a, b);
}

template <class T>
inline Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  auto* an = a.node();
  auto* bn = b.node();
  return detail::make_node<T>(
      a.shape(), std::move(out), "mul",
      [an, bn](Node<T>& self) {
        if (an->requires_grad)
          for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->value[i];
        if (bn->requires_grad)
          for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->value[i];
      },
      a, b);
}

template <class T>
inline Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.values());
  for (auto& x : out) x *= c;
  auto* an = a.node();
  return detail::make_node<T>(
      a.shape(), std::move(out), "scale",
      [an, c](Node<T>& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += c * self.grad[i];
      },
      a);
}

template <class T>
inline Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.values());
  for (auto& x : out) x += c;
  auto* an = a.node();
  return detail::make_node<T>(
      a.shape(), std::move(out), "add_scalar",
      [an](Node<T>& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
      },
      a);
}

template <class T>
inline Tensor<T> square(const Tensor<T>& a) {
  std::vector<T> out(a.values());
  for (auto& x : out) x *= x;
  auto* an = a.node();
  return detail::make_node<T>(
      a.shape(), std::move(out), "square",
      [an](Node<T>& self) {
        for (size_t i = 0; i < self.grad.size(); ++i)
          an->grad[i] += T(2) * an->value[i] * self.grad[i];
      },
      a);
}

template <class T>
inline Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.values());
  for (auto& x : out) {
    if (x >= T(0)) {
      x = T(1) / (T(1) + std::exp(-x));
    } else {
      const T e = std::exp(x);
      x = e / (T(1) + e);
    }
  }
  auto* an = a.node();
  return detail::make_node<T>(
      a.shape(), std::move(out), "sigmoid",
      [an](Node<T>& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) {
          const T y = self.value[i];
          an->grad[i] += self.grad[i] * y * (T(1) - y);
        }
      },
      a);
}

// Exact GELU, x * Phi(x).
template <class T>
inline Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  std::vector<T> out(a.values());
  for (auto& x : out) x = x * T(0.5) * (T(1) + std::erf(x * kInvSqrt2));
  auto* an = a.node();
  return detail::make_node<T>(
      a.shape(), std::move(out), "gelu",
      [an](Node<T>& self) {
        constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
        for (size_t i = 0; i < self.grad.size(); ++i) {
          const T x = an->value[i];
          const T phi = T(0.5) * (T(1) + std::erf(x * kInvSqrt2));
          const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * x * x);
          an->grad[i] += self.grad[i] * (phi + x * pdf);
        }
      },
      a);
}

// log(max(x, floor)); clamped entries get zero gradient.
template <class T>
inline Tensor<T> log_clamped(const Tensor<T>& a, T floor = T(1e-12)) {
  std::vector<T> out(a.values());
  for (auto& x : out) x = std::log(std::max(x, floor));
  auto* an = a.node();
  return detail::make_node<T>(
      a.shape(), std::move(out), "log_clamped",
      [an, floor](Node<T>& self) {
        for (size_t i = 0; i < self.grad.size(); ++i)
          if (an->value[i] > floor) an->grad[i] += self.grad[i] / an->value[i];
      },
      a);
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <class T>
inline Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const int m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw ShapeError("matmul: inner dimensions " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  std::vector<T> out(static_cast<size_t>(m) * n);
  detail::Map<T>(out.data(), m, n).noalias() =
      detail::CMap<T>(a.values().data(), m, k) * detail::CMap<T>(b.values().data(), k, n);
  auto* an = a.node();
  auto* bn = b.node();
  return detail::make_node<T>(
      {m, n}, std::move(out), "matmul",
      [an, bn, m, k, n](Node<T>& self) {
        detail::CMap<T> g(self.grad.data(), m, n);
        if (an->requires_grad)
          detail::Map<T>(an->grad.data(), m, k).noalias() +=
              g * detail::CMap<T>(bn->value.data(), k, n).transpose();
        if (bn->requires_grad)
          detail::Map<T>(bn->grad.data(), k, n).noalias() +=
              detail::CMap<T>(an->value.data(), m, k).transpose() * g;
      },
      a, b);
}

template <class T>
inline Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank(a, 2, "transpose");
  const int m = a.shape()[0], n = a.shape()[1];
  std::vector<T> out(a.values().size());
  detail::Map<T>(out.data(), n, m) = detail::CMap<T>(a.values().data(), m, n).transpose();
  auto* an = a.node();
  return detail::make_node<T>(
      {n, m}, std::move(out), "transpose",
      [an, m, n](Node<T>& self) {
        detail::Map<T>(an->grad.data(), m, n) +=
            detail::CMap<T>(self.grad.data(), n, m).transpose();
      },
      a);
}

// y[i,j] = a[i,j] + v[j]
template <class T>
inline Tensor<T> add_rowvec(const Tensor<T>& a, const Tensor<T>& v) {
  detail::require_rank(a, 2, "add_rowvec");
  detail::require_rank(v, 1, "add_rowvec");
  const int m = a.shape()[0], n = a.shape()[1];
  if (v.shape()[0] != n)
    throw ShapeError("add_rowvec: vector length " + shape_str(v.shape()) + " vs cols " +
                     std::to_string(n));
  std::vector<T> out(a.values());
  const auto& vv = v.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] += vv[j];
  auto* an = a.node();
  auto* vn = v.node();
  return detail::make_node<T>(
      a.shape(), std::move(out), "add_rowvec",
      [an, vn, m, n](Node<T>& self) {
        if (an->requires_grad)
          for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        if (vn->requires_grad)
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) vn->grad[j] += self.grad[static_cast<size_t>(i) * n + j];
      },
      a, v);
}

template <class T>
inline Tensor<T> slice_cols(const Tensor<T>& a, int col0, int len) {
  detail::require_rank(a, 2, "slice_cols");
  const int m = a.shape()[0], n = a.shape()[1];
  if (col0 < 0 || len <= 0 || col0 + len > n)
    throw ShapeError("slice_cols: [" + std::to_string(col0) + "," + std::to_string(col0 + len) +
                     ") out of " + std::to_string(n) + " columns");
  std::vector<T> out(static_cast<size_t>(m) * len);
  const auto& av = a.values();
  for (int i = 0; i < m; ++i)
    std::copy_n(av.data() + static_cast<size_t>(i) * n + col0, len,
                out.data() + static_cast<size_t>(i) * len);
  auto* an = a.node();
  return detail::make_node<T>(
      {m, len}, std::move(out), "slice_cols",
      [an, m, n, col0, len](Node<T>& self) {
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < len; ++j)
            an->grad[static_cast<size_t>(i) * n + col0 + j] +=
                self.grad[static_cast<size_t>(i) * len + j];
      },
      a);
}

template <class T>
inline Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int m = parts[0].shape()[0];
  int n = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_cols");
    if (p.shape()[0] != m) throw ShapeError("concat_cols: row mismatch");
    n += p.shape()[1];
  }
  std::vector<T> out(static_cast<size_t>(m) * n);
  int off = 0;
  for (const auto& p : parts) {
    const int pn = p.shape()[1];
    for (int i = 0; i < m; ++i)
      std::copy_n(p.values().data() + static_cast<size_t>(i) * pn, pn,
                  out.data() + static_cast<size_t>(i) * n + off);
    off += pn;
  }
  detail::check_finite(out, "concat_cols");
  auto node = std::make_shared<Node<T>>();
  node->shape = {m, n};
  node->value = std::move(out);
  bool rg = false;
  for (const auto& p : parts) rg = rg || p.requires_grad();
  node->requires_grad = rg;
  if (rg) {
    std::vector<Node<T>*> raw;
    std::vector<int> widths;
    for (const auto& p : parts) {
      node->parents.push_back(p.node_ptr());
      raw.push_back(p.node());
      widths.push_back(p.shape()[1]);
    }
    node->backprop = [raw, widths, m, n](Node<T>& self) {
      int off2 = 0;
      for (size_t k = 0; k < raw.size(); ++k) {
        const int pn = widths[k];
        if (raw[k]->requires_grad)
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < pn; ++j)
              raw[k]->grad[static_cast<size_t>(i) * pn + j] +=
                  self.grad[static_cast<size_t>(i) * n + off2 + j];
        off2 += pn;
      }
    };
  }
  return Tensor<T>(std::move(node));
}

// Concatenate rank-1 tensors into one vector.
template <class T>
inline Tensor<T> concat_vec(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_vec: no inputs");
  int n = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 1, "concat_vec");
    n += p.shape()[0];
  }
  std::vector<T> out;
  out.reserve(n);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  detail::check_finite(out, "concat_vec");
  auto node = std::make_shared<Node<T>>();
  node->shape = {n};
  node->value = std::move(out);
  bool rg = false;
  for (const auto& p : parts) rg = rg || p.requires_grad();
  node->requires_grad = rg;
  if (rg) {
    std::vector<Node<T>*> raw;
    std::vector<int> lens;
    for (const auto& p : parts) {
      node->parents.push_back(p.node_ptr());
      raw.push_back(p.node());
      lens.push_back(p.shape()[0]);
    }
    node->backprop = [raw, lens](Node<T>& self) {
      int off = 0;
      for (size_t k = 0; k < raw.size(); ++k) {
        if (raw[k]->requires_grad)
          for (int j = 0; j < lens[k]; ++j) raw[k]->grad[j] += self.grad[off + j];
        off += lens[k];
      }
    };
  }
  return Tensor<T>(std::move(node));
}

// Same data, new shape; gradient passes through untouched.
template <class T>
inline Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  check_shape_positive(shape, "reshape");
  if (numel(shape) != a.size())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<T> out(a.values());
  auto* an = a.node();
  return detail::make_node<T>(
      std::move(shape), std::move(out), "reshape",
      [an](Node<T>& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
      },
      a);
}

// Slice index `i` along the first axis of a rank>=2 tensor (contiguous chunk).
template <class T>
inline Tensor<T> slice_first(const Tensor<T>& a, int i) {
  const auto& s = a.shape();
  if (s.size() < 2) throw ShapeError("slice_first: rank must be >= 2");
  if (i < 0 || i >= s[0])
    throw ShapeError("slice_first: index " + std::to_string(i) + " out of " + std::to_string(s[0]));
  Shape rest(s.begin() + 1, s.end());
  const long chunk = numel(rest);
  std::vector<T> out(a.values().begin() + i * chunk, a.values().begin() + (i + 1) * chunk);
  auto* an = a.node();
  return detail::make_node<T>(
      std::move(rest), std::move(out), "slice_first",
      [an, i, chunk](Node<T>& self) {
        for (long j = 0; j < chunk; ++j) an->grad[i * chunk + j] += self.grad[j];
      },
      a);
}

// Single element by flat index, as a scalar tensor.
template <class T>
inline Tensor<T> pick(const Tensor<T>& a, long idx) {
  if (idx < 0 || idx >= a.size())
    throw ShapeError("pick: flat index " + std::to_string(idx) + " out of " + std::to_string(a.size()));
  std::vector<T> out{a.values()[idx]};
  auto* an = a.node();
  return detail::make_node<T>(
      {1}, std::move(out), "pick",
      [an, idx](Node<T>& self) { an->grad[idx] += self.grad[0]; },
      a);
}

// ---------------------------------------------------------------------------
// Normalizations and reductions
// ---------------------------------------------------------------------------

// Row-stable softmax over axis 0 or 1 of a matrix.
template <class T>
inline Tensor<T> softmax(const Tensor<T>& a, int axis) {
  detail::require_rank(a, 2, "softmax");
  if (axis != 0 && axis != 1)
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for rank 2");
  const int m = a.shape()[0], n = a.shape()[1];
  const int slices = (axis == 1) ? m : n;
  const int len = (axis == 1) ? n : m;
  const auto at = [&](const std::vector<T>& v, int s, int j) -> T {
    return (axis == 1) ? v[static_cast<size_t>(s) * n + j] : v[static_cast<size_t>(j) * n + s];
  };
  const auto ref = [&](std::vector<T>& v, int s, int j) -> T& {
    return (axis == 1) ? v[static_cast<size_t>(s) * n + j] : v[static_cast<size_t>(j) * n + s];
  };
  std::vector<T> out(a.values().size());
  for (int s = 0; s < slices; ++s) {
    T mx = at(a.values(), s, 0);
    for (int j = 1; j < len; ++j) mx = std::max(mx, at(a.values(), s, j));
    T sum = T(0);
    for (int j = 0; j < len; ++j) {
      const T e = std::exp(at(a.values(), s, j) - mx);
      ref(out, s, j) = e;
      sum += e;
    }
    for (int j = 0; j < len; ++j) ref(out, s, j) /= sum;
  }
  auto* an = a.node();
  return detail::make_node<T>(
      a.shape(), std::move(out), "softmax",
      [an, axis, m, n, slices, len](Node<T>& self) {
        const auto idx = [&](int s, int j) -> size_t {
          return (axis == 1) ? static_cast<size_t>(s) * n + j : static_cast<size_t>(j) * n + s;
        };
        for (int s = 0; s < slices; ++s) {
          T dot = T(0);
          for (int j = 0; j < len; ++j) dot += self.grad[idx(s, j)] * self.value[idx(s, j)];
          for (int j = 0; j < len; ++j)
            an->grad[idx(s, j)] += self.value[idx(s, j)] * (self.grad[idx(s, j)] - dot);
        }
      },
      a);
}

// Per-row normalization over the last axis of a matrix, with affine params.
template <class T>
inline Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                            T eps = T(1e-5)) {
  detail::require_rank(x, 2, "layer_norm");
  const int m = x.shape()[0], n = x.shape()[1];
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n})
    throw ShapeError("layer_norm: gamma/beta must have length " + std::to_string(n) + ", got " +
                     shape_str(gamma.shape()) + " / " + shape_str(beta.shape()));
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
  std::vector<T> out(x.values().size());
  std::vector<T> inv_std(m), means(m);
  const auto& xv = x.values();
  for (int i = 0; i < m; ++i) {
    const T* row = xv.data() + static_cast<size_t>(i) * n;
    T mu = T(0);
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= T(n);
    T var = T(0);
    for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(n);
    const T is = T(1) / std::sqrt(var + eps);
    means[i] = mu;
    inv_std[i] = is;
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] = gamma.values()[j] * (row[j] - mu) * is + beta.values()[j];
  }
  auto* xn = x.node();
  auto* gn = gamma.node();
  auto* bn = beta.node();
  return detail::make_node<T>(
      x.shape(), std::move(out), "layer_norm",
      [xn, gn, bn, m, n, means = std::move(means), inv_std = std::move(inv_std)](Node<T>& self) {
        for (int i = 0; i < m; ++i) {
          const T* row = xn->value.data() + static_cast<size_t>(i) * n;
          const T* g = self.grad.data() + static_cast<size_t>(i) * n;
          const T is = inv_std[i], mu = means[i];
          if (gn->requires_grad || bn->requires_grad) {
            for (int j = 0; j < n; ++j) {
              const T xhat = (row[j] - mu) * is;
              if (gn->requires_grad) gn->grad[j] += g[j] * xhat;
              if (bn->requires_grad) bn->grad[j] += g[j];
            }
          }
          if (xn->requires_grad) {
            // dx = (gamma*g - mean(gamma*g) - xhat*mean(gamma*g*xhat)) * inv_std
            T s1 = T(0), s2 = T(0);
            for (int j = 0; j < n; ++j) {
              const T gg = gn->value[j] * g[j];
              s1 += gg;
              s2 += gg * (row[j] - mu) * is;
            }
            s1 /= T(n);
            s2 /= T(n);
            for (int j = 0; j < n; ++j) {
              const T gg = gn->value[j] * g[j];
              const T xhat = (row[j] - mu) * is;
              xn->grad[static_cast<size_t>(i) * n + j] += (gg - s1 - xhat * s2) * is;
            }
          }
        }
      },
      x, gamma, beta);
}

// Mean over rows: (m,n) -> (1,n).
template <class T>
inline Tensor<T> mean_rows(const Tensor<T>& a) {
  detail::require_rank(a, 2, "mean_rows");
  const int m = a.shape()[0], n = a.shape()[1];
  std::vector<T> out(n, T(0));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[j] += a.values()[static_cast<size_t>(i) * n + j];
  for (auto& x : out) x /= T(m);
  auto* an = a.node();
  return detail::make_node<T>(
      {1, n}, std::move(out), "mean_rows",
      [an, m, n](Node<T>& self) {
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            an->grad[static_cast<size_t>(i) * n + j] += self.grad[j] / T(m);
      },
      a);
}

template <class T>
inline Tensor<T> sum_all(const Tensor<T>& a) {
  T s = T(0);
  for (T x : a.values()) s += x;
  auto* an = a.node();
  return detail::make_node<T>(
      {1}, std::vector<T>{s}, "sum_all",
      [an](Node<T>& self) {
        for (auto& g : an->grad) g += self.grad[0];
      },
      a);
}

template <class T>
inline Tensor<T> mean_all(const Tensor<T>& a) {
  T s = T(0);
  for (T x : a.values()) s += x;
  const T inv = T(1) / static_cast<T>(a.size());
  auto* an = a.node();
  return detail::make_node<T>(
      {1}, std::vector<T>{s * inv}, "mean_all",
      [an, inv](Node<T>& self) {
        for (auto& g : an->grad) g += self.grad[0] * inv;
      },
      a);
}

// ---------------------------------------------------------------------------
// Image ops (planar CHW layout)
// ---------------------------------------------------------------------------

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// x: (C,H,W), w: (O,C,kh,kw), b: (O). im2col + GEMM.
template <class T>
inline Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride = 1,
                        int pad = 0) {
  detail::require_rank(x, 3, "conv2d");
  detail::require_rank(w, 4, "conv2d");
  detail::require_rank(b, 1, "conv2d");
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const int O = w.shape()[0], kc = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
  if (kc != C)
    throw ShapeError("conv2d: input channels " + std::to_string(C) + " vs kernel " + std::to_string(kc));
  if (b.shape()[0] != O) throw ShapeError("conv2d: bias length vs output channels");
  if (stride < 1 || pad < 0) throw ConfigError("conv2d: bad stride/pad");
  const int Ho = conv_out_extent(H, kh, stride, pad);
  const int Wo = conv_out_extent(W, kw, stride, pad);
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: kernel larger than padded input");

  const int K = C * kh * kw;
  const int Npix = Ho * Wo;
  std::vector<T> col(static_cast<size_t>(K) * Npix);
  const auto& xv = x.values();
  for (int c = 0; c < C; ++c)
    for (int dy = 0; dy < kh; ++dy)
      for (int dx = 0; dx < kw; ++dx) {
        T* dst = col.data() + (static_cast<size_t>(c) * kh * kw + dy * kw + dx) * Npix;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride + dy - pad;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride + dx - pad;
            dst[oy * Wo + ox] = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                    ? xv[(static_cast<size_t>(c) * H + iy) * W + ix]
                                    : T(0);
          }
        }
      }

  std::vector<T> out(static_cast<size_t>(O) * Npix);
  detail::Map<T>(out.data(), O, Npix).noalias() =
      detail::CMap<T>(w.values().data(), O, K) * detail::CMap<T>(col.data(), K, Npix);
  for (int o = 0; o < O; ++o) {
    const T bo = b.values()[o];
    T* row = out.data() + static_cast<size_t>(o) * Npix;
    for (int j = 0; j < Npix; ++j) row[j] += bo;
  }

  auto* xn = x.node();
  auto* wn = w.node();
  auto* bn = b.node();
  const bool need_col = x.requires_grad() || w.requires_grad();
  return detail::make_node<T>(
      {O, Ho, Wo}, std::move(out), "conv2d",
      [xn, wn, bn, C, H, W, O, kh, kw, K, Ho, Wo, Npix, stride, pad,
       col = need_col ? std::move(col) : std::vector<T>{}](Node<T>& self) {
        detail::CMap<T> g(self.grad.data(), O, Npix);
        if (bn->requires_grad)
          for (int o = 0; o < O; ++o) {
            T s = T(0);
            const T* row = self.grad.data() + static_cast<size_t>(o) * Npix;
            for (int j = 0; j < Npix; ++j) s += row[j];
            bn->grad[o] += s;
          }
        if (wn->requires_grad)
          detail::Map<T>(wn->grad.data(), O, K).noalias() +=
              g * detail::CMap<T>(col.data(), K, Npix).transpose();
        if (xn->requires_grad) {
          std::vector<T> dcol(static_cast<size_t>(K) * Npix);
          detail::Map<T>(dcol.data(), K, Npix).noalias() =
              detail::CMap<T>(wn->value.data(), O, K).transpose() * g;
          for (int c = 0; c < C; ++c)
            for (int dy = 0; dy < kh; ++dy)
              for (int dx = 0; dx < kw; ++dx) {
                const T* src = dcol.data() + (static_cast<size_t>(c) * kh * kw + dy * kw + dx) * Npix;
                for (int oy = 0; oy < Ho; ++oy) {
                  const int iy = oy * stride + dy - pad;
                  if (iy < 0 || iy >= H) continue;
                  for (int ox = 0; ox < Wo; ++ox) {
                    const int ix = ox * stride + dx - pad;
                    if (ix >= 0 && ix < W)
                      xn->grad[(static_cast<size_t>(c) * H + iy) * W + ix] += src[oy * Wo + ox];
                  }
                }
              }
        }
      },
      x, w, b);
}

// 2x2 average pooling, stride 2.
template <class T>
inline Tensor<T> avg_pool2(const Tensor<T>& x) {
  detail::require_rank(x, 3, "avg_pool2");
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  if (H % 2 || W % 2) throw ShapeError("avg_pool2: extents must be even, got " + shape_str(x.shape()));
  const int Ho = H / 2, Wo = W / 2;
  std::vector<T> out(static_cast<size_t>(C) * Ho * Wo);
  const auto& xv = x.values();
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        const size_t base = (static_cast<size_t>(c) * H + 2 * oy) * W + 2 * ox;
        out[(static_cast<size_t>(c) * Ho + oy) * Wo + ox] =
            (xv[base] + xv[base + 1] + xv[base + W] + xv[base + W + 1]) * T(0.25);
      }
  auto* xn = x.node();
  return detail::make_node<T>(
      {C, Ho, Wo}, std::move(out), "avg_pool2",
      [xn, C, H, W, Ho, Wo](Node<T>& self) {
        for (int c = 0; c < C; ++c)
          for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
              const T g = self.grad[(static_cast<size_t>(c) * Ho + oy) * Wo + ox] * T(0.25);
              const size_t base = (static_cast<size_t>(c) * H + 2 * oy) * W + 2 * ox;
              xn->grad[base] += g;
              xn->grad[base + 1] += g;
              xn->grad[base + W] += g;
              xn->grad[base + W + 1] += g;
            }
      },
      x);
}

template <class T>
inline Tensor<T> upsample_nearest(const Tensor<T>& x, int factor) {
  detail::require_rank(x, 3, "upsample_nearest");
  if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const int Ho = H * factor, Wo = W * factor;
  std::vector<T> out(static_cast<size_t>(C) * Ho * Wo);
  const auto& xv = x.values();
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox)
        out[(static_cast<size_t>(c) * Ho + oy) * Wo + ox] =
            xv[(static_cast<size_t>(c) * H + oy / factor) * W + ox / factor];
  auto* xn = x.node();
  return detail::make_node<T>(
      {C, Ho, Wo}, std::move(out), "upsample_nearest",
      [xn, C, H, W, Ho, Wo, factor](Node<T>& self) {
        for (int c = 0; c < C; ++c)
          for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox)
              xn->grad[(static_cast<size_t>(c) * H + oy / factor) * W + ox / factor] +=
                  self.grad[(static_cast<size_t>(c) * Ho + oy) * Wo + ox];
      },
      x);
}

// Per-channel mean over spatial positions: (C,H,W) -> (C).
template <class T>
inline Tensor<T> channel_mean(const Tensor<T>& x) {
  detail::require_rank(x, 3, "channel_mean");
  const int C = x.shape()[0];
  const long hw = static_cast<long>(x.shape()[1]) * x.shape()[2];
  std::vector<T> out(C, T(0));
  for (int c = 0; c < C; ++c) {
    const T* p = x.values().data() + c * hw;
    T s = T(0);
    for (long j = 0; j < hw; ++j) s += p[j];
    out[c] = s / static_cast<T>(hw);
  }
  auto* xn = x.node();
  return detail::make_node<T>(
      {C}, std::move(out), "channel_mean",
      [xn, C, hw](Node<T>& self) {
        for (int c = 0; c < C; ++c) {
          const T g = self.grad[c] / static_cast<T>(hw);
          T* p = xn->grad.data() + c * hw;
          for (long j = 0; j < hw; ++j) p[j] += g;
        }
      },
      x);
}

// Per-channel population standard deviation over spatial positions.
// A tiny eps inside the sqrt keeps the gradient defined on constant channels.
template <class T>
inline Tensor<T> channel_std(const Tensor<T>& x, T eps = T(1e-12)) {
  detail::require_rank(x, 3, "channel_std");
  const int C = x.shape()[0];
  const long hw = static_cast<long>(x.shape()[1]) * x.shape()[2];
  std::vector<T> out(C), mu(C);
  for (int c = 0; c < C; ++c) {
    const T* p = x.values().data() + c * hw;
    T s = T(0);
    for (long j = 0; j < hw; ++j) s += p[j];
    const T m = s / static_cast<T>(hw);
    T v = T(0);
    for (long j = 0; j < hw; ++j) v += (p[j] - m) * (p[j] - m);
    mu[c] = m;
    out[c] = std::sqrt(v / static_cast<T>(hw) + eps);
  }
  auto* xn = x.node();
  return detail::make_node<T>(
      {C}, std::move(out), "channel_std",
      [xn, C, hw, mu = std::move(mu)](Node<T>& self) {
        for (int c = 0; c < C; ++c) {
          const T sigma = self.value[c];
          const T g = self.grad[c] / (static_cast<T>(hw) * sigma);
          const T* p = xn->value.data() + c * hw;
          T* gp = xn->grad.data() + c * hw;
          for (long j = 0; j < hw; ++j) gp[j] += g * (p[j] - mu[c]);
        }
      },
      x);
}

// ---------------------------------------------------------------------------
// Layout conversions between token matrices and planar grids
// ---------------------------------------------------------------------------

// (L,d) tokens -> (d,h,w) grid with token i at (i/w, i%w).
template <class T>
inline Tensor<T> tokens_to_chw(const Tensor<T>& f, int h, int w) {
  detail::require_rank(f, 2, "tokens_to_chw");
  const int L = f.shape()[0], d = f.shape()[1];
  if (h * w != L)
    throw ShapeError("tokens_to_chw: grid " + std::to_string(h) + "x" + std::to_string(w) +
                     " vs " + std::to_string(L) + " tokens");
  std::vector<T> out(f.values().size());
  for (int i = 0; i < L; ++i)
    for (int c = 0; c < d; ++c)
      out[static_cast<size_t>(c) * L + i] = f.values()[static_cast<size_t>(i) * d + c];
  auto* fn = f.node();
  return detail::make_node<T>(
      {d, h, w}, std::move(out), "tokens_to_chw",
      [fn, L, d](Node<T>& self) {
        for (int i = 0; i < L; ++i)
          for (int c = 0; c < d; ++c)
            fn->grad[static_cast<size_t>(i) * d + c] += self.grad[static_cast<size_t>(c) * L + i];
      },
      f);
}

template <class T>
inline Tensor<T> chw_to_tokens(const Tensor<T>& x) {
  detail::require_rank(x, 3, "chw_to_tokens");
  const int d = x.shape()[0], L = x.shape()[1] * x.shape()[2];
  std::vector<T> out(x.values().size());
  for (int c = 0; c < d; ++c)
    for (int i = 0; i < L; ++i)
      out[static_cast<size_t>(i) * d + c] = x.values()[static_cast<size_t>(c) * L + i];
  auto* xn = x.node();
  return detail::make_node<T>(
      {L, d}, std::move(out), "chw_to_tokens",
      [xn, L, d](Node<T>& self) {
        for (int c = 0; c < d; ++c)
          for (int i = 0; i < L; ++i)
            xn->grad[static_cast<size_t>(c) * L + i] += self.grad[static_cast<size_t>(i) * d + c];
      },
      x);
}

// Non-overlapping PxP patches of a (ch,H,W) image as rows, channels innermost:
// row i = patch (i/w, i%w), element ((py*P+px)*ch + c).
template <class T>
inline Tensor<T> patchify(const Tensor<T>& img, int patch) {
  detail::require_rank(img, 3, "patchify");
  const int ch = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
  if (patch <= 0 || H % patch || W % patch)
    throw ShapeError("patchify: image " + shape_str(img.shape()) + " not divisible by patch " +
                     std::to_string(patch));
  const int h = H / patch, w = W / patch, L = h * w, D = patch * patch * ch;
  std::vector<T> out(static_cast<size_t>(L) * D);
  const auto& v = img.values();
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      T* row = out.data() + (static_cast<size_t>(r) * w + c) * D;
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          for (int k = 0; k < ch; ++k)
            row[(py * patch + px) * ch + k] =
                v[(static_cast<size_t>(k) * H + r * patch + py) * W + c * patch + px];
    }
  auto* in = img.node();
  return detail::make_node<T>(
      {L, D}, std::move(out), "patchify",
      [in, ch, H, W, h, w, patch, D](Node<T>& self) {
        for (int r = 0; r < h; ++r)
          for (int c = 0; c < w; ++c) {
            const T* row = self.grad.data() + (static_cast<size_t>(r) * w + c) * D;
            for (int py = 0; py < patch; ++py)
              for (int px = 0; px < patch; ++px)
                for (int k = 0; k < ch; ++k)
                  in->grad[(static_cast<size_t>(k) * H + r * patch + py) * W + c * patch + px] +=
                      row[(py * patch + px) * ch + k];
          }
      },
      img);
}

template <class T>
inline Tensor<T> unpatchify(const Tensor<T>& tokens, int h, int w, int patch, int ch) {
  detail::require_rank(tokens, 2, "unpatchify");
  const int L = tokens.shape()[0], D = tokens.shape()[1];
  if (L != h * w || D != patch * patch * ch)
    throw ShapeError("unpatchify: tokens " + shape_str(tokens.shape()) + " vs grid/patch/channels");
  const int H = h * patch, W = w * patch;
  std::vector<T> out(static_cast<size_t>(ch) * H * W);
  const auto& v = tokens.values();
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const T* row = v.data() + (static_cast<size_t>(r) * w + c) * D;
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          for (int k = 0; k < ch; ++k)
            out[(static_cast<size_t>(k) * H + r * patch + py) * W + c * patch + px] =
                row[(py * patch + px) * ch + k];
    }
  auto* tn = tokens.node();
  return detail::make_node<T>(
      {ch, H, W}, std::move(out), "unpatchify",
      [tn, ch, H, W, h, w, patch, D](Node<T>& self) {
        for (int r = 0; r < h; ++r)
          for (int c = 0; c < w; ++c) {
            T* row = tn->grad.data() + (static_cast<size_t>(r) * w + c) * D;
            for (int py = 0; py < patch; ++py)
              for (int px = 0; px < patch; ++px)
                for (int k = 0; k < ch; ++k)
                  row[(py * patch + px) * ch + k] +=
                      self.grad[(static_cast<size_t>(k) * H + r * patch + py) * W + c * patch + px];
          }
      },
      tokens);
}

// ---------------------------------------------------------------------------
// Small conveniences built from primitives
// ---------------------------------------------------------------------------

template <class T>
inline Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_rowvec(matmul(x, w), b);
}

// Mean of squared differences over all elements.
template <class T>
inline Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  return mean_all(square(sub(a, b)));
}

}  // namespace uistyler::ad
