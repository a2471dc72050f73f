// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dld/common/error.hpp"

namespace dld::nc {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  // Empty until a gradient first flows into this node.
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t id = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  T* ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T{0});
    return grad.data();
  }
};

inline std::uint64_t next_node_id() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (nc::numel(shape) != values.size()) {
      throw ShapeError("tensor: shape " + to_string(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    }
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->id = next_node_id();
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::size_t n = nc::numel(shape);
    return from(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    std::size_t n = nc::numel(shape);
    return from(std::move(shape), std::vector<T>(n, v), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i < 0 ? rank() + i : i)); }
  std::size_t numel() const { return node_->value.size(); }
  std::uint64_t id() const { return node_->id; }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }

  std::span<const T> data() const { return node_->value; }
  // Direct write access; only meaningful for leaves (parameters, inputs).
  std::span<T> mutable_data() { return node_->value; }

  // Zeros when no gradient has reached this tensor.
  std::vector<T> grad() const {
    if (node_->grad.empty()) return std::vector<T>(node_->value.size(), T{0});
    return node_->grad;
  }
  std::span<T> mutable_grad() { return {node_->ensure_grad(), node_->value.size()}; }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T{0});
  }

  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on) node_->ensure_grad();
  }

  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor " + to_string(shape()) + " is not a scalar");
    return node_->value[0];
  }

  T operator[](std::size_t i) const { return node_->value.at(i); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

  // Deep copy of values into a fresh constant leaf.
  Tensor clone() const { return from(shape(), node_->value, false); }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Ordered record of executed differentiable operations on this thread.
// Execution order is a topological order because inputs always exist before outputs.
template <class T>
class Graph {
 public:
  static Graph& current() {
    thread_local Graph g;
    return g;
  }

  bool grad_enabled() const { return enabled_; }
  void set_grad_enabled(bool on) { enabled_ = on; }

  void record(std::shared_ptr<Node<T>> n) { tape_.push_back(std::move(n)); }
  const std::vector<std::shared_ptr<Node<T>>>& tape() const { return tape_; }
  std::size_t size() const { return tape_.size(); }

  // Drops the record and severs node links so intermediate buffers are released
  // even if a caller still holds an output tensor.
  void clear() {
    for (auto& n : tape_) {
      n->inputs.clear();
      n->backward_fn = nullptr;
    }
    tape_.clear();
  }

 private:
  std::vector<std::shared_ptr<Node<T>>> tape_;
  bool enabled_ = true;
};

// Fingerprint of the branches taken by piecewise ops (relu, abs, clamp_min, max).
// Only collected while active; gradcheck uses it to spot stencils that straddle a kink.
class BranchTrace {
 public:
  static BranchTrace& current() {
    thread_local BranchTrace t;
    return t;
  }
  bool active() const { return active_; }
  void start() {
    active_ = true;
    hash_ = 1469598103934665603ULL;
  }
  std::uint64_t stop() {
    active_ = false;
    return hash_;
  }
  void mix(std::uint64_t v) {
    hash_ ^= v + 0x9e3779b97f4a7c15ULL + (hash_ << 6) + (hash_ >> 2);
  }

 private:
  bool active_ = false;
  std::uint64_t hash_ = 0;
};

template <class T>
class NoGradGuard {
 public:
  NoGradGuard() : prev_(Graph<T>::current().grad_enabled()) { Graph<T>::current().set_grad_enabled(false); }
  ~NoGradGuard() { Graph<T>::current().set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {

template <class T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace detail

// Builds an op output; records it on the graph when any input needs a gradient.
template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->id = next_node_id();
  n->op = op;
  auto& g = Graph<T>::current();
  bool needs = false;
  if (g.grad_enabled()) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    n->leaf = false;
    n->inputs.reserve(inputs.size());
    for (const auto& t : inputs) n->inputs.push_back(t.ptr());
    n->backward_fn = std::move(backward_fn);
    g.record(n);
  }
  return Tensor<T>(std::move(n));
}

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across calls;
// with retain_graph=false the record is freed afterwards.
template <class T>
void backward(const Tensor<T>& loss, bool retain_graph = false) {
  if (loss.numel() != 1) {
    throw ContractViolation("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  auto& g = Graph<T>::current();
  if (loss.requires_grad()) {
    for (const auto& n : g.tape()) n->grad.clear();
    loss.node()->ensure_grad()[0] += T{1};
    const auto& tape = g.tape();
    for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
      Node<T>& n = **it;
      if (!n.grad.empty() && n.backward_fn) n.backward_fn(n);
    }
  }
  if (!retain_graph) g.clear();
}

}  // namespace dld::nc
