// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include "dat/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dat::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 16;

template <typename T>
void transpose_into(const T* src, std::size_t rows, std::size_t cols,
                    std::vector<T>& dst) {
  dst.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

// C[m,n] (+)= A[m,k] B[k,n], four rows of C per step so each B row is
// loaded once per block.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* __restrict__ a,
             const T* __restrict__ b, T* __restrict__ c, bool accumulate) {
  const std::size_t blocks = (m + 3) / 4;
  const bool par = m * n * k >= kParallelWork && blocks > 1;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = blk * 4;
    const std::size_t rows = std::min<std::size_t>(4, m - i0);
    if (!accumulate) std::fill(c + i0 * n, c + (i0 + rows) * n, T(0));
    if (rows == 4) {
      T* __restrict__ c0 = c + i0 * n;
      T* __restrict__ c1 = c0 + n;
      T* __restrict__ c2 = c1 + n;
      T* __restrict__ c3 = c2 + n;
      const T* a0 = a + i0 * k;
      const T* a1 = a0 + k;
      const T* a2 = a1 + k;
      const T* a3 = a2 + k;
      for (std::size_t p = 0; p < k; ++p) {
        const T v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
        const T* __restrict__ br = b + p * n;
#pragma omp simd
        for (std::size_t j = 0; j < n; ++j) {
          const T bj = br[j];
          c0[j] += v0 * bj;
          c1[j] += v1 * bj;
          c2[j] += v2 * bj;
          c3[j] += v3 * bj;
        }
      }
    } else {
      for (std::size_t i = i0; i < i0 + rows; ++i) {
        T* __restrict__ ci = c + i * n;
        const T* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
          const T v = ai[p];
          const T* __restrict__ br = b + p * n;
#pragma omp simd
          for (std::size_t j = 0; j < n; ++j) ci[j] += v * br[j];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    return;
  }
  thread_local std::vector<T> at_buf, bt_buf;
  if (ta == Trans::Yes) {
    transpose_into(a, k, m, at_buf);
    a = at_buf.data();
  }
  if (tb == Trans::Yes) {
    transpose_into(b, n, k, bt_buf);
    b = bt_buf.data();
  }
  gemm_nn(m, n, k, a, b, c, accumulate);
}

template <typename T>
void pairwise_bilinear(const T* q, const T* k, T* out, std::size_t n,
                       std::size_t r, std::size_t p) {
  const bool par = n * n * r * p >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < n; ++i) {
    const T* qi = q + i * r * p;
    for (std::size_t j = 0; j < n; ++j) {
      const T* kj = k + j * r * p;
      T* o = out + (i * n + j) * r;
      for (std::size_t l = 0; l < r; ++l) {
        const T* ql = qi + l * p;
        const T* kl = kj + l * p;
        T acc = 0;
        for (std::size_t t = 0; t < p; ++t) acc += ql[t] * kl[t];
        o[l] = acc;
      }
    }
  }
}

template <typename T>
void pairwise_bilinear_backward(const T* g, const T* q, const T* k, T* dq,
                                T* dk, std::size_t n, std::size_t r,
                                std::size_t p) {
  const bool par = n * n * r * p >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < n; ++i) {
    T* dqi = dq + i * r * p;
    for (std::size_t j = 0; j < n; ++j) {
      const T* gij = g + (i * n + j) * r;
      const T* kj = k + j * r * p;
      for (std::size_t l = 0; l < r; ++l) {
        const T w = gij[l];
        for (std::size_t t = 0; t < p; ++t) dqi[l * p + t] += w * kj[l * p + t];
      }
    }
  }
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t j = 0; j < n; ++j) {
    T* dkj = dk + j * r * p;
    for (std::size_t i = 0; i < n; ++i) {
      const T* gij = g + (i * n + j) * r;
      const T* qi = q + i * r * p;
      for (std::size_t l = 0; l < r; ++l) {
        const T w = gij[l];
        for (std::size_t t = 0; t < p; ++t) dkj[l * p + t] += w * qi[l * p + t];
      }
    }
  }
}

template <typename T>
bool softmax_rows(const T* x, T* y, std::size_t rows, std::size_t len) {
  bool ok = true;
  const bool par = rows * len >= kParallelWork;
#pragma omp parallel for schedule(static) if (par) reduction(&& : ok)
  for (std::size_t row = 0; row < rows; ++row) {
    const T* xr = x + row * len;
    T* yr = y + row * len;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xr[j]);
    if (mx == -std::numeric_limits<T>::infinity()) {
      ok = false;
      continue;
    }
    T sum = 0;
    for (std::size_t j = 0; j < len; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < len; ++j) yr[j] /= sum;
  }
  return ok;
}

namespace serial {

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) {
        const T av = ta == Trans::No ? a[i * k + p] : a[p * m + i];
        const T bv = tb == Trans::No ? b[p * n + j] : b[j * k + p];
        acc += av * bv;
      }
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void pairwise_bilinear(const T* q, const T* k, T* out, std::size_t n,
                       std::size_t r, std::size_t p) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t l = 0; l < r; ++l) {
        T acc = 0;
        for (std::size_t t = 0; t < p; ++t)
          acc += q[(i * r + l) * p + t] * k[(j * r + l) * p + t];
        out[(i * n + j) * r + l] = acc;
      }
}

template <typename T>
void pairwise_bilinear_backward(const T* g, const T* q, const T* k, T* dq,
                                T* dk, std::size_t n, std::size_t r,
                                std::size_t p) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t l = 0; l < r; ++l) {
        const T w = g[(i * n + j) * r + l];
        for (std::size_t t = 0; t < p; ++t) {
          dq[(i * r + l) * p + t] += w * k[(j * r + l) * p + t];
          dk[(j * r + l) * p + t] += w * q[(i * r + l) * p + t];
        }
      }
}

template <typename T>
bool softmax_rows(const T* x, T* y, std::size_t rows, std::size_t len) {
  bool ok = true;
  for (std::size_t row = 0; row < rows; ++row) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, x[row * len + j]);
    if (mx == -std::numeric_limits<T>::infinity()) {
      ok = false;
      continue;
    }
    T sum = 0;
    for (std::size_t j = 0; j < len; ++j) sum += std::exp(x[row * len + j] - mx);
    for (std::size_t j = 0; j < len; ++j)
      y[row * len + j] = std::exp(x[row * len + j] - mx) / sum;
  }
  return ok;
}

}  // namespace serial

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

#define DAT_INSTANTIATE_KERNELS(NS, T)                                          \
  template void NS::gemm<T>(Trans, Trans, std::size_t, std::size_t,            \
                            std::size_t, const T*, const T*, T*, bool);        \
  template void NS::pairwise_bilinear<T>(const T*, const T*, T*, std::size_t,  \
                                         std::size_t, std::size_t);            \
  template void NS::pairwise_bilinear_backward<T>(                             \
      const T*, const T*, const T*, T*, T*, std::size_t, std::size_t,          \
      std::size_t);                                                            \
  template bool NS::softmax_rows<T>(const T*, T*, std::size_t, std::size_t);

DAT_INSTANTIATE_KERNELS(kernels, float)
DAT_INSTANTIATE_KERNELS(kernels, double)
DAT_INSTANTIATE_KERNELS(kernels::serial, float)
DAT_INSTANTIATE_KERNELS(kernels::serial, double)

}  // namespace dat::kernels
