#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "uistyler/errors.hpp"
#include "uistyler/rng.hpp"

namespace uistyler::ad {

using Shape = std::vector<int>;

inline long numel(const Shape& s) {
  long n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

inline void check_shape_positive(const Shape& s, const char* what) {
  if (s.empty()) throw ShapeError(std::string(what) + ": empty shape");
  for (int d : s)
    if (d <= 0) throw ShapeError(std::string(what) + ": non-positive extent in " + shape_str(s));
}

// Toggle for scanning every op output for NaN/Inf. On by default; a hot
// training loop may switch it off and rely on the per-iteration loss check.
inline bool& finite_checks() {
  static bool on = true;
  return on;
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on first backward touch
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

  bool is_leaf() const { return parents.empty(); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

// Value-semantics handle onto a node of the computation graph. Ops build new
// nodes that hold shared ownership of their inputs; dropping the last handle
// to a step's loss frees the whole interior graph while parameter leaves,
// held elsewhere, survive with their accumulated gradients.
template <class T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape) { return filled(std::move(shape), T(0)); }

  static Tensor filled(Shape shape, T v) {
    check_shape_positive(shape, "Tensor::filled");
    auto n = std::make_shared<Node<T>>();
    n->value.assign(numel(shape), v);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<T> data) {
    check_shape_positive(shape, "Tensor::from");
    if (static_cast<long>(data.size()) != numel(shape))
      throw ShapeError("Tensor::from: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return Tensor(std::move(n));
  }

  static Tensor scalar_value(T v) { return filled({1}, v); }

  // Trainable leaf.
  static Tensor param(Shape shape, std::vector<T> data) {
    Tensor t = from(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  Node<T>* node() const { return node_.get(); }
  std::shared_ptr<Node<T>> node_ptr() const { return node_; }

  const Shape& shape() const { return node_->shape; }
  long size() const { return static_cast<long>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<T>& values() const { return node_->value; }
  std::vector<T>& mutable_values() { return node_->value; }
  const std::vector<T>& grad() const { return node_->grad; }
  std::vector<T>& mutable_grad() { return node_->grad; }

  T item() const {
    if (size() != 1) throw ContractError("item(): tensor has " + std::to_string(size()) + " elements");
    return node_->value[0];
  }

  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  // Copy of the values as a grad-less leaf, disconnected from any graph.
  Tensor detach() const { return from(node_->shape, node_->value); }

  Tensor clone_leaf() const {
    Tensor t = from(node_->shape, node_->value);
    t.node_->requires_grad = node_->requires_grad;
    t.node_->grad = node_->grad;
    return t;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <class T>
inline void topo_order(Node<T>* root, std::vector<Node<T>*>& order) {
  // Iterative post-order DFS; `order` ends children-before-parents.
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Interior node gradients are reset
// before the sweep; leaf (parameter) gradients accumulate across calls until
// zero_grad, which gives the usual grad-accumulation semantics.
template <class T>
inline void backward(const Tensor<T>& loss) {
  if (loss.size() != 1) throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  Node<T>* root = loss.node();
  if (!root->requires_grad) return;

  std::vector<Node<T>*> order;
  detail::topo_order(root, order);

  for (Node<T>* n : order) {
    if (n->is_leaf()) {
      n->ensure_grad();
    } else {
      n->grad.assign(n->value.size(), T(0));
    }
  }
  root->grad[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

namespace detail {

template <class T>
inline void check_finite(const std::vector<T>& v, const char* op) {
  if (!finite_checks()) return;
  for (T x : v)
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value in output");
}

// Shared boilerplate for building an op node.
template <class T, class... Parents>
inline Tensor<T> make_node(Shape shape, std::vector<T> value, const char* op,
                           std::function<void(Node<T>&)> backprop, const Parents&... parents) {
  check_finite(value, op);
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = (... || parents.requires_grad());
  if (n->requires_grad) {
    n->parents = {parents.node_ptr()...};
    n->backprop = std::move(backprop);
  }
  return Tensor<T>(std::move(n));
}

}  // namespace detail

// Xavier/Glorot uniform init: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
// fan_in and fan_out are the first and second extents; trailing extents (e.g.
// conv kernel height/width) multiply into both fans.
template <class T>
inline Tensor<T> xavier_init(const Shape& shape, Rng rng) {
  check_shape_positive(shape, "xavier_init");
  if (shape.size() < 2) throw ShapeError("xavier_init: need >= 2 dims, got " + shape_str(shape));
  long receptive = 1;
  for (size_t i = 2; i < shape.size(); ++i) receptive *= shape[i];
  const double fan_in = static_cast<double>(shape[0]) * receptive;
  const double fan_out = static_cast<double>(shape[1]) * receptive;
  const T a = static_cast<T>(std::sqrt(6.0 / (fan_in + fan_out)));
  std::vector<T> data(numel(shape));
  for (auto& x : data) x = rng.uniform<T>(-a, a);
  return Tensor<T>::param(shape, std::move(data));
}

}  // namespace uistyler::ad
