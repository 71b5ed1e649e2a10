// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "dat/random.hpp"
#include "dat/tensor.hpp"

namespace dat {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
Tensor<T> normal_param(Shape shape, double stddev, Rng& rng) {
  std::vector<T> v(shape_numel(shape));
  for (auto& e : v) e = static_cast<T>(rng.normal() * stddev);
  return Tensor<T>::parameter(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> constant_param(Shape shape, T value) {
  std::vector<T> v(shape_numel(shape), value);
  return Tensor<T>::parameter(std::move(shape), std::move(v));
}

template <typename T>
void add_param(ParamList<T>& out, const std::string& prefix, const char* name, const Tensor<T>& t) {
  if (t.defined()) out.push_back({prefix + name, t});
}

}  // namespace dat
