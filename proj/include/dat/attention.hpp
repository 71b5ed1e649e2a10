// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dat/config.hpp"
#include "dat/param.hpp"
#include "dat/symbols.hpp"

namespace dat {

class AttentionMask {
 public:
  enum class Kind { None, Causal, Explicit };

  static AttentionMask none() { return AttentionMask(Kind::None); }
  static AttentionMask causal() { return AttentionMask(Kind::Causal); }
  // keep is row-major n x n; keep[i*n+j] != 0 lets position i attend to j.
  static AttentionMask explicit_matrix(std::size_t n, std::vector<std::uint8_t> keep);

  Kind kind() const { return kind_; }
  bool allows(std::size_t i, std::size_t j) const;
  // Keep matrix for length n; empty for Kind::None.
  std::vector<std::uint8_t> matrix(std::size_t n) const;

 private:
  explicit AttentionMask(Kind k) : kind_(k) {}
  Kind kind_;
  std::size_t n_ = 0;
  std::vector<std::uint8_t> keep_;
};

// Rotates q and k ([..., n, d_key]) by position 0..n-1.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> apply_rope(const Tensor<T>& q, const Tensor<T>& k, double base = 10000.0);

template <typename T>
struct SensoryParams {
  Tensor<T> W_q, W_k, W_v, W_o, b_o;
};

template <typename T>
struct RelationalParams {
  Tensor<T> W_q_attn, W_k_attn;  // attention scores
  Tensor<T> W_q_rel, W_k_rel;    // relation maps; W_k_rel undefined when symmetric
  Tensor<T> W_s;                 // [d_model, n_h_ra * d_h]
  Tensor<T> W_r;                 // [n_h_ra, d_r, d_h]; undefined for the Rca variant
  Tensor<T> W_o, b_o;
};

// Multi-head layer mixing sensory and relational heads. Inputs are [n, d]
// or [B, n, d]; outputs keep the same leading layout.
template <typename T>
class DualAttention {
 public:
  struct RelationalOut {
    Tensor<T> y;          // [.., n, n_h_ra * d_h]
    Tensor<T> relations;  // [.., n, n, d_r]; undefined for Rca
  };
  struct Out {
    Tensor<T> y;  // [.., n, d_model]
    Tensor<T> relations;
  };

  DualAttention() = default;
  // out_std scales the init of the output projections (residual scaling).
  DualAttention(const DualAttnConfig& cfg, bool bias, double out_std, Rng& rng);

  const DualAttnConfig& config() const { return cfg_; }

  Tensor<T> sensory(const Tensor<T>& x, const AttentionMask& mask, bool train = false, Rng* rng = nullptr) const;
  RelationalOut relational(const Tensor<T>& x, const Symbols<T>& symbols, const AttentionMask& mask,
                           bool train = false, Rng* rng = nullptr) const;
  // Symbols routed by relational-head attention with the relation term dropped.
  Tensor<T> rca(const Tensor<T>& x, const Symbols<T>& symbols, const AttentionMask& mask, bool train = false,
                Rng* rng = nullptr) const;
  Out forward(const Tensor<T>& x, const Symbols<T>* symbols, const AttentionMask& mask, bool train = false,
              Rng* rng = nullptr) const;

  // Relation tensor alone, [.., n, n, d_r].
  Tensor<T> relations(const Tensor<T>& x) const;

  void collect(ParamList<T>& out, const std::string& prefix) const;

  SensoryParams<T> sa;
  RelationalParams<T> ra;

 private:
  Tensor<T> relational_impl(const Tensor<T>& x3, const Symbols<T>& symbols, const AttentionMask& mask, bool train,
                            Rng* rng, bool with_relations, Tensor<T>* relations_out) const;

  DualAttnConfig cfg_;
};

// Standard multi-head attention from x to a separate context y (decoder
// cross-attention). No mask.
template <typename T>
class CrossAttention {
 public:
  CrossAttention() = default;
  CrossAttention(std::size_t d_model, std::size_t n_heads, bool bias, double out_std, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& y, bool train = false, Rng* rng = nullptr,
                    double dropout = 0.0) const;
  void collect(ParamList<T>& out, const std::string& prefix) const;

  Tensor<T> W_q, W_k, W_v, W_o, b_o;

 private:
  std::size_t d_model_ = 0, n_heads_ = 0;
};

}  // namespace dat
