// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dat {

using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

const char* dtype_name(DType d);
std::size_t dtype_size(DType d);

// Error taxonomy shared by every module. The CLI maps each to an error category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* category() const noexcept { return "error"; }
};

class DimensionError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "dimension"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "config"; }
};

class CapacityError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "capacity"; }
};

// Raised when an attention row has every position masked out.
class MaskError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "mask"; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "numeric"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "io"; }
};

class IntegrityError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "integrity"; }
};

// Tied best candidates where a unique selection is required.
class SelectionError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "selection"; }
};

// Requested construction is outside the supported family.
class UnsupportedError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "unsupported"; }
};

// A verification check did not hold.
class VerificationError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "verification"; }
};

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;

  void accumulate(std::span<const T> g);
  std::vector<T>& grad_buffer();
};

}  // namespace detail

// Dense row-major array with an optional handle into the autodiff graph.
// Copies share the underlying node; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor parameter(Shape shape, std::vector<T> data);
  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  // Negative axes count from the end.
  std::size_t dim(int axis) const;
  std::size_t numel() const { return node_ ? node_->value.size() : 0; }
  static constexpr DType dtype() { return dtype_of<T>(); }

  std::span<const T> data() const;
  std::span<T> mutable_data();
  const T& at(std::size_t flat) const { return node_->value[flat]; }
  T item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  // Reverse-mode sweep from this tensor. Non-scalar roots take an explicit seed.
  void backward() const;
  void backward(std::span<const T> seed) const;

  Tensor detach() const;
  Tensor clone() const;

  const NodePtr& node() const { return node_; }
  static Tensor from_node(NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  NodePtr node_;
};

// Ordered record of the graph reachable from a root: inputs precede consumers.
template <typename T>
class Tape {
 public:
  explicit Tape(const Tensor<T>& root);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<detail::Node<T>*>& nodes() const { return nodes_; }

  // Runs every recorded backward closure once, in reverse order.
  // Returns the number of closures invoked.
  std::size_t run_backward() const;

 private:
  std::vector<detail::Node<T>*> nodes_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace dat
