// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

// Serial reference vs OpenMP kernels at the shapes of the vision config
// (batch 32, 9 patches, d_model 128) and a larger LM-like shape.

#include <benchmark/benchmark.h>

#include <vector>

#include "dat/kernels.hpp"
#include "dat/random.hpp"

namespace {

using dat::kernels::Trans;

std::vector<float> randv(std::size_t n, std::uint64_t seed) {
  dat::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& e : v) e = static_cast<float>(rng.normal());
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& st) {
  const auto m = static_cast<std::size_t>(st.range(0)), k = static_cast<std::size_t>(st.range(1)),
             n = static_cast<std::size_t>(st.range(2));
  auto a = randv(m * k, 1), b = randv(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : st) {
    if constexpr (Parallel)
      dat::kernels::gemm(Trans::No, Trans::No, m, n, k, a.data(), b.data(), c.data(), false);
    else
      dat::kernels::serial::gemm(Trans::No, Trans::No, m, n, k, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * 2 * m * n * k));
  st.counters["threads"] = dat::kernels::max_threads();
}

template <bool Parallel>
void BM_Softmax(benchmark::State& st) {
  const auto rows = static_cast<std::size_t>(st.range(0)), len = static_cast<std::size_t>(st.range(1));
  auto x = randv(rows * len, 3);
  std::vector<float> y(rows * len);
  for (auto _ : st) {
    if constexpr (Parallel)
      dat::kernels::softmax_rows(x.data(), y.data(), rows, len);
    else
      dat::kernels::serial::softmax_rows(x.data(), y.data(), rows, len);
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * rows * len));
}

template <bool Parallel>
void BM_Pairwise(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0)), r = static_cast<std::size_t>(st.range(1)),
             p = static_cast<std::size_t>(st.range(2));
  auto q = randv(n * r * p, 4), k = randv(n * r * p, 5);
  std::vector<float> out(n * n * r);
  for (auto _ : st) {
    if constexpr (Parallel)
      dat::kernels::pairwise_bilinear(q.data(), k.data(), out.data(), n, r, p);
    else
      dat::kernels::serial::pairwise_bilinear(q.data(), k.data(), out.data(), n, r, p);
    benchmark::DoNotOptimize(out.data());
  }
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * 2 * n * n * r * p));
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Args({288, 128, 128})->Args({288, 432, 128})->Args({1024, 256, 256});
BENCHMARK(BM_Gemm<true>)->Name("gemm/omp")->Args({288, 128, 128})->Args({288, 432, 128})->Args({1024, 256, 256});
BENCHMARK(BM_Softmax<false>)->Name("softmax/serial")->Args({32 * 8 * 9, 9})->Args({8 * 8 * 64, 64});
BENCHMARK(BM_Softmax<true>)->Name("softmax/omp")->Args({32 * 8 * 9, 9})->Args({8 * 8 * 64, 64});
BENCHMARK(BM_Pairwise<false>)->Name("pairwise/serial")->Args({9, 8, 8})->Args({64, 8, 16});
BENCHMARK(BM_Pairwise<true>)->Name("pairwise/omp")->Args({9, 8, 8})->Args({64, 8, 16});

BENCHMARK_MAIN();
