// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

// Hot loops behind the tensor ops. Each kernel has an OpenMP version and a
// plain serial reference in kernels::serial with the same signature; the two
// are checked against each other in the tests and compared in the benchmark.
//
// Parallel kernels split work over independent output rows only, so the
// floating-point reduction order never depends on the thread count.

namespace dat::kernels {

enum class Trans { No, Yes };

// Row-major C[m,n] (+)= op(A) * op(B); op(A) is m x k, op(B) is k x n.
// Leading dimensions are implied: A is stored m x k (or k x m when
// transposed), B is k x n (or n x k when transposed).
template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate);

// out[i,j,l] = sum_p q[i,l,p] * k[j,l,p] for one batch element.
// q, k are n x r x p; out is n x n x r.
template <typename T>
void pairwise_bilinear(const T* q, const T* k, T* out, std::size_t n,
                       std::size_t r, std::size_t p);

// Gradients of pairwise_bilinear; accumulates into dq and dk.
template <typename T>
void pairwise_bilinear_backward(const T* g, const T* q, const T* k, T* dq,
                                T* dk, std::size_t n, std::size_t r,
                                std::size_t p);

// Row softmax over contiguous rows of length len. Returns false if some
// row is entirely -inf (the row is left untouched).
template <typename T>
bool softmax_rows(const T* x, T* y, std::size_t rows, std::size_t len);

namespace serial {

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate);

template <typename T>
void pairwise_bilinear(const T* q, const T* k, T* out, std::size_t n,
                       std::size_t r, std::size_t p);

template <typename T>
void pairwise_bilinear_backward(const T* g, const T* q, const T* k, T* dq,
                                T* dk, std::size_t n, std::size_t r,
                                std::size_t p);

template <typename T>
bool softmax_rows(const T* x, T* y, std::size_t rows, std::size_t len);

}  // namespace serial

int max_threads();

}  // namespace dat::kernels
