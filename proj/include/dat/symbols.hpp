// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dat/config.hpp"
#include "dat/param.hpp"

namespace dat {

// Symbols handed to relational heads. Per-position symbols are [B or 1, n, d]
// (1 when they do not depend on the input); position-relative symbols are a
// per-pair table [n, n, d] holding s_{j-i}.
template <typename T>
struct Symbols {
  SymbolKind kind = SymbolKind::Positional;
  Tensor<T> values;

  bool per_pair() const { return kind == SymbolKind::PositionRelative; }
};

// One library shared by every layer of a model.
template <typename T>
class SymbolLibrary {
 public:
  SymbolLibrary() = default;
  SymbolLibrary(const SymbolConfig& cfg, std::size_t d_model, Rng& rng);

  const SymbolConfig& config() const { return cfg_; }
  std::size_t d_model() const { return d_model_; }

  // x is [n, d] or [B, n, d]; only its extents matter for the
  // content-independent kinds.
  Symbols<T> assign(const Tensor<T>& x) const;

  Tensor<T> positional(std::size_t n) const;
  Tensor<T> position_relative(std::size_t n) const;
  Tensor<T> symbolic_attention(const Tensor<T>& x) const;

  // S_lib, F_lib, W_q under "symbols.*".
  void collect(ParamList<T>& out) const;

  Tensor<T> S_lib, F_lib, W_q;

 private:
  SymbolConfig cfg_;
  std::size_t d_model_ = 0;
};

// Library row used for the pair (i, j): clip(j - i, -delta, delta) + delta.
std::size_t relative_slot(std::size_t i, std::size_t j, std::size_t delta);

}  // namespace dat
