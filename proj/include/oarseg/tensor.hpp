// Copyright 2026 The oarseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Dense row-major tensors with a tape-free reverse-mode autodiff graph.
//
// Every op result keeps shared ownership of its inputs and a backward closure,
// so the graph lives exactly as long as the tensors that reference it. Calling
// backward() walks the graph once in reverse topological order and (unless
// asked to retain it) releases all interior nodes afterwards.
//
// The scalar type is a template parameter: Tensor<double> is used by the
// verification suites, Tensor<float> by training and inference.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "oarseg/errors.hpp"

namespace oarseg {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Row-major strides for a shape.
inline std::vector<Index> strides_of(const Shape& shape) {
  std::vector<Index> st(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
  return st;
}

class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

// Disables graph recording for its lifetime (inference, metric evaluation).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs that require grad.
  std::function<void(Node&)> backward_fn;

  T* grad_data() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad.data();
  }
  bool input_needs_grad(std::size_t i) const { return inputs[i]->requires_grad; }
  Node& in(std::size_t i) { return *inputs[i]; }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (numel_of(shape) != static_cast<Index>(values.size())) {
      throw DimensionError("tensor shape " + to_string(shape) + " holds " +
                           std::to_string(numel_of(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    for (Index e : shape) {
      if (e <= 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
    }
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto count = static_cast<std::size_t>(numel_of(shape));
    return from(std::move(shape), std::vector<T>(count, T(0)), requires_grad);
  }
  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    const auto count = static_cast<std::size_t>(numel_of(shape));
    return from(std::move(shape), std::vector<T>(count, v), requires_grad);
  }
  static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index dim(int axis) const {
    const int n = ndim();
    return node_->shape.at(static_cast<std::size_t>(axis < 0 ? axis + n : axis));
  }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  Index numel() const { return static_cast<Index>(node_->value.size()); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  T* raw() { return node_->value.data(); }
  const T* raw() const { return node_->value.data(); }
  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }
  T operator[](Index i) const { return node_->value[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->grad_data();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }
  bool is_leaf() const { return node_->is_leaf; }
  const char* op() const { return node_->op; }

  // New leaf holding a copy of the values, disconnected from any graph.
  Tensor detach() const { return from(shape(), node_->value, false); }

  // Reverse-mode sweep from this scalar. Leaf grads accumulate across calls.
  void backward(bool retain_graph = false) const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

namespace detail {

template <typename T>
void check_finite(const std::vector<T>& v, const char* op) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(op, current_scope(),
                         "non-finite value at flat index " + std::to_string(i));
    }
  }
}

}  // namespace detail

// Wraps freshly computed values into a graph node. The backward closure is
// recorded only when grad mode is on and some input requires grad.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                      std::vector<Tensor<T>> inputs, std::function<void(Node<T>&)> backward_fn) {
  detail::check_finite(values, op);
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->op = op;
  n->is_leaf = false;
  bool any = false;
  if (GradMode::enabled()) {
    for (const auto& t : inputs) any = any || t.requires_grad();
  }
  if (any) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (auto& t : inputs) n->inputs.push_back(t.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(n));
}

template <typename T>
void Tensor<T>::backward(bool retain_graph) const {
  if (!node_ || !node_->requires_grad) {
    throw GraphError("backward() called on a tensor that is not attached to a graph");
  }
  if (node_->value.size() != 1) {
    throw GraphError("backward() needs a scalar loss, got shape " + to_string(node_->shape));
  }
  // Iterative post-order DFS gives a topological order without recursion depth limits.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order) {
    if (!n->is_leaf) n->grad.clear();
  }
  node_->grad_data()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  if (!retain_graph) {
    for (Node<T>* n : order) {
      if (n->is_leaf || n == node_.get()) continue;
      n->inputs.clear();
      n->backward_fn = nullptr;
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
    node_->inputs.clear();
    node_->backward_fn = nullptr;
  }
}

}  // namespace oarseg
