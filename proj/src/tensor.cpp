// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include "dat/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace dat {

const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

namespace detail {

template <typename T>
std::vector<T>& Node<T>::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), T(0));
  return grad;
}

template <typename T>
void Node<T>::accumulate(std::span<const T> g) {
  auto& buf = grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

template struct Node<float>;
template struct Node<double>;

}  // namespace detail

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<detail::Node<T>>()) {
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  node_->value.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
    : node_(std::make_shared<detail::Node<T>>()) {
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != data.size())
    throw DimensionError("shape " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  node_->value = std::move(data);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> data) {
  Tensor t(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  t.node_->op = "param";
  return t;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  static const Shape empty;
  return node_ ? node_->shape : empty;
}

template <typename T>
std::size_t Tensor<T>::dim(int axis) const {
  const auto r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return shape()[static_cast<std::size_t>(a)];
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!node_) return {};
  return node_->value;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_) return {};
  return node_->value;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  if (node_) node_->requires_grad = on;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!node_) return {};
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  return node_->grad_buffer();
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_) node_->grad.clear();
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1)
    throw DimensionError("backward() without seed needs a scalar, got " + shape_str(shape()));
  const T one = T(1);
  backward(std::span<const T>(&one, 1));
}

template <typename T>
void Tensor<T>::backward(std::span<const T> seed) const {
  if (!node_) return;
  if (seed.size() != numel())
    throw DimensionError("backward seed size mismatch for " + shape_str(shape()));
  node_->accumulate(seed);
  Tape<T>(*this).run_backward();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  Tensor t;
  t.node_ = std::make_shared<detail::Node<T>>();
  t.node_->shape = node_->shape;
  t.node_->value = node_->value;
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor t = detach();
  t.node_->requires_grad = node_->requires_grad;
  return t;
}

template <typename T>
Tape<T>::Tape(const Tensor<T>& root) {
  if (!root.defined() || !root.requires_grad()) return;
  // Iterative post-order DFS; a node is emitted after all of its parents.
  std::unordered_set<const detail::Node<T>*> seen;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      nodes_.push_back(node);
      stack.pop_back();
    }
  }
}

template <typename T>
std::size_t Tape<T>::run_backward() const {
  std::size_t calls = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) {
      n->backward(*n);
      ++calls;
    }
  }
  return calls;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace dat
