// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dat/random.hpp"
#include "dat/tensor.hpp"

namespace dat::testing {

template <typename T = double>
Tensor<T> randn(Shape shape, Rng& rng, double stddev = 1.0, bool grad = true) {
  std::vector<T> v(shape_numel(shape));
  for (auto& e : v) e = static_cast<T>(rng.normal() * stddev);
  return grad ? Tensor<T>::parameter(std::move(shape), std::move(v)) : Tensor<T>(std::move(shape), std::move(v));
}

template <typename T>
double max_abs_diff(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

inline double max_abs_diff(const std::vector<double>& a, std::span<const double> b) {
  return max_abs_diff<double>(std::span<const double>(a), b);
}

// Weighted sum with fixed random weights: a scalar loss whose gradient
// reaches every output entry with O(1) magnitude.
inline std::vector<double> loss_weights(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(n);
  for (auto& e : w) e = rng.normal();
  return w;
}

}  // namespace dat::testing
