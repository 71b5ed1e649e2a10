// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dat/random.hpp"
#include "dat/tensor.hpp"

// Differentiable primitives. Every op records a backward closure when any
// input requires grad and recording is enabled on the calling thread.
//
// Broadcasting for element-wise ops aligns trailing dimensions; an extent of
// 1 (or a missing leading dimension) broadcasts. Batched matmul broadcasts
// its leading batch dimensions the same way.

namespace dat {

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);
template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x);
template <typename T>
Tensor<T> slice_last(const Tensor<T>& x, std::size_t start, std::size_t len);
template <typename T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts);

// out[..., :] = table[ids[...], :]; prefix gives the leading output shape.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int32_t> ids,
                      Shape prefix);

// Max-subtracted softmax. Throws MaskError if a slice is entirely -inf.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);

// Sets entries of the trailing [rows, cols] matrices to value where keep == 0.
template <typename T>
Tensor<T> masked_fill_last2(const Tensor<T>& x, std::span<const std::uint8_t> keep,
                            std::size_t rows, std::size_t cols, T value);

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x);
template <typename T>
Tensor<T> mean_all(const Tensor<T>& x);
// Mean over one axis; the axis is removed.
template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> silu(const Tensor<T>& x);

// Normalises over the last axis. gamma/beta may be undefined (no affine).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5));
template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gamma, T eps = T(1e-6));

// Inverted dropout; identity when !train or p == 0. p must lie in [0, 1).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool train, Rng& rng);

// q, k: [..., n, r, p] -> [..., n, n, r] with out[i,j,l] = <q[i,l,:], k[j,l,:]>.
template <typename T>
Tensor<T> pairwise_bilinear(const Tensor<T>& q, const Tensor<T>& k);

// Rotary embedding over the last axis of x: [..., n, d], d even.
// positions[i] is the absolute position of row i along axis -2.
template <typename T>
Tensor<T> rope(const Tensor<T>& x, std::span<const int> positions, double base = 10000.0);

// Mean cross-entropy of logits [..., C] against integer targets, skipping
// targets equal to ignore_index. Returns a [1] tensor.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets,
                        std::int32_t ignore_index = -1);

}  // namespace dat
