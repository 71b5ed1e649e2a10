// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include "dat/symbols.hpp"

#include <cmath>

#include "dat/ops.hpp"

namespace dat {

std::size_t relative_slot(std::size_t i, std::size_t j, std::size_t delta) {
  const auto d = static_cast<long long>(delta);
  long long off = static_cast<long long>(j) - static_cast<long long>(i);
  off = std::max(-d, std::min(d, off));
  return static_cast<std::size_t>(off + d);
}

template <typename T>
SymbolLibrary<T>::SymbolLibrary(const SymbolConfig& cfg, std::size_t d_model, Rng& rng)
    : cfg_(cfg), d_model_(d_model) {
  cfg.validate(d_model);
  constexpr double kStd = 0.02;
  switch (cfg.kind) {
    case SymbolKind::Positional:
      S_lib = normal_param<T>({cfg.max_len, d_model}, kStd, rng);
      break;
    case SymbolKind::PositionRelative:
      S_lib = normal_param<T>({2 * cfg.max_rel + 1, d_model}, kStd, rng);
      break;
    case SymbolKind::SymbolicAttention:
      S_lib = normal_param<T>({cfg.n_symbols, d_model}, kStd, rng);
      F_lib = normal_param<T>({cfg.n_symbols, d_model}, kStd, rng);
      W_q = normal_param<T>({d_model, d_model}, kStd, rng);
      break;
  }
}

template <typename T>
Tensor<T> SymbolLibrary<T>::positional(std::size_t n) const {
  if (n > cfg_.max_len)
    throw CapacityError("sequence of length " + std::to_string(n) + " exceeds the " +
                        std::to_string(cfg_.max_len) + " positional symbols");
  std::vector<std::int32_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<std::int32_t>(i);
  return gather_rows(S_lib, std::span<const std::int32_t>(ids), Shape{n});
}

template <typename T>
Tensor<T> SymbolLibrary<T>::position_relative(std::size_t n) const {
  std::vector<std::int32_t> ids(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) ids[i * n + j] = static_cast<std::int32_t>(relative_slot(i, j, cfg_.max_rel));
  return gather_rows(S_lib, std::span<const std::int32_t>(ids), Shape{n, n});
}

template <typename T>
Tensor<T> SymbolLibrary<T>::symbolic_attention(const Tensor<T>& x) const {
  if (x.dim(-1) != d_model_)
    throw DimensionError("symbolic attention expects width " + std::to_string(d_model_) + ", got " +
                         shape_str(x.shape()));
  const std::size_t n = x.dim(-2);
  const std::size_t b = x.numel() / (n * d_model_);
  const std::size_t h = cfg_.n_sym_heads, dh = d_model_ / h, ns = cfg_.n_symbols;
  // [B, n, h, dh] -> [B, h, n, dh]
  auto q = permute(reshape(matmul(reshape(x, {b, n, d_model_}), W_q), {b, n, h, dh}), {0, 2, 1, 3});
  auto f = permute(reshape(F_lib, {ns, h, dh}), {1, 2, 0});  // [h, dh, ns]
  auto s = permute(reshape(S_lib, {ns, h, dh}), {1, 0, 2});  // [h, ns, dh]
  auto logits = scale(matmul(q, f), T(1) / std::sqrt(static_cast<T>(dh)));
  auto out = matmul(softmax(logits, -1), s);  // [B, h, n, dh]
  return reshape(permute(out, {0, 2, 1, 3}), x.shape());
}

template <typename T>
Symbols<T> SymbolLibrary<T>::assign(const Tensor<T>& x) const {
  const std::size_t n = x.dim(-2);
  switch (cfg_.kind) {
    case SymbolKind::Positional:
      return {cfg_.kind, reshape(positional(n), {1, n, d_model_})};
    case SymbolKind::PositionRelative:
      return {cfg_.kind, position_relative(n)};
    case SymbolKind::SymbolicAttention:
      return {cfg_.kind, symbolic_attention(x)};
  }
  throw ConfigError("unknown symbol kind");
}

template <typename T>
void SymbolLibrary<T>::collect(ParamList<T>& out) const {
  add_param(out, "symbols.", "S_lib", S_lib);
  add_param(out, "symbols.", "F_lib", F_lib);
  add_param(out, "symbols.", "W_q", W_q);
}

template class SymbolLibrary<float>;
template class SymbolLibrary<double>;

}  // namespace dat
