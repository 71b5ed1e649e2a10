// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <tuple>

#include "dat/checks.hpp"
#include "dat/ops.hpp"

namespace dat::verify {
namespace {

std::vector<double> normal_vec(std::size_t n, Rng& rng, double sd = 1.0) {
  std::vector<double> v(n);
  for (auto& e : v) e = rng.normal() * sd;
  return v;
}

BilinearForms random_forms(std::size_t dim, std::size_t d_r, Rng& rng) {
  BilinearForms f;
  f.dim = dim;
  f.A = Mat(dim, dim);
  for (auto& e : f.A.v) e = rng.normal() / std::sqrt(static_cast<double>(dim));
  for (std::size_t l = 0; l < d_r; ++l) {
    Mat B(dim, dim);
    for (auto& e : B.v) e = rng.normal() / std::sqrt(static_cast<double>(dim));
    f.B.push_back(B);
  }
  return f;
}

// Euclidean nearest neighbour as a selection: u(x, y) = -|x - y|^2.
SelectRelateSpec nearest_neighbour_spec(std::size_t dim) {
  SelectRelateSpec s;
  s.dim = dim;
  s.d_r = dim;
  s.utility = [](const std::vector<double>& x, const std::vector<double>& y) {
    double d = 0;
    for (std::size_t i = 0; i < x.size(); ++i) d += (x[i] - y[i]) * (x[i] - y[i]);
    return -d;
  };
  s.relation = [](const std::vector<double>&, const std::vector<double>& y) { return y; };
  return s;
}

TEST(Oracle, SingleCandidateIsRelationWithIt) {
  Rng rng(1);
  const auto spec = SelectRelateSpec::from_bilinear(random_forms(3, 2, rng));
  const auto x = normal_vec(3, rng), y = normal_vec(3, rng);
  EXPECT_EQ(oracle_select_then_relate(spec, x, {y}), spec.relation(x, y));
  EXPECT_TRUE(std::isinf(selection_margin(spec, x, {y})));
}

TEST(Oracle, NearestNeighbourSelection) {
  const auto spec = nearest_neighbour_spec(2);
  const std::vector<std::vector<double>> ys{{5, 5}, {0.9, 1.2}, {-3, 0}, {1, -1}};
  EXPECT_EQ(select_index(spec, {1, 1}, ys), 1u);
  EXPECT_EQ(oracle_select_then_relate(spec, {1, 1}, ys), ys[1]);
  EXPECT_EQ(select_index(spec, {-2, 0.5}, ys), 2u);
}

TEST(Oracle, AgreesWithFullSortCrossCheck) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto forms = random_forms(4, 3, rng);
    const auto spec = SelectRelateSpec::from_bilinear(forms);
    const auto x = normal_vec(4, rng);
    std::vector<std::vector<double>> ys;
    for (std::size_t k = 0, n = 1 + rng.below(8); k < n; ++k) ys.push_back(normal_vec(4, rng));
    // Independent route: sort candidate indices by utility, take the last.
    std::vector<std::size_t> order(ys.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return spec.utility(x, ys[a]) < spec.utility(x, ys[b]); });
    const auto best = order.back();
    EXPECT_EQ(select_index(spec, x, ys), best);
    // Relation by explicit bilinear sums.
    const auto got = oracle_select_then_relate(spec, x, ys);
    for (std::size_t l = 0; l < 3; ++l) {
      double want = 0;
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) want += x[i] * forms.B[l](i, j) * ys[best][j];
      EXPECT_NEAR(got[l], want, 1e-12);
    }
  }
}

TEST(Oracle, TiedBestIsSelectionError) {
  const auto spec = nearest_neighbour_spec(2);
  const std::vector<std::vector<double>> ys{{1, 0}, {-1, 0}, {4, 4}};
  EXPECT_THROW(oracle_select_then_relate(spec, {0, 0}, ys), SelectionError);
  EXPECT_THROW(select_index(spec, {0, 0}, ys), SelectionError);
  EXPECT_EQ(selection_margin(spec, {0, 0}, ys), 0.0);
  EXPECT_THROW(oracle_select_then_relate(spec, {0, 0}, {}), DimensionError);
}

TEST(Approximant, NonBilinearSpecUnsupported) {
  EXPECT_THROW(construct_ra_approximant(nearest_neighbour_spec(2), 4.0), UnsupportedError);
  Rng rng(6);
  EXPECT_THROW(construct_ra_approximant(SelectRelateSpec::from_bilinear(random_forms(2, 1, rng)), 0.0), ConfigError);
}

TEST(Approximant, SingleCandidateExactForAnyBeta) {
  Rng rng(3);
  const auto spec = SelectRelateSpec::from_bilinear(random_forms(3, 2, rng));
  const auto x = normal_vec(3, rng), y = normal_vec(3, rng);
  const auto want = spec.relation(x, y);
  for (double beta : {1e-3, 0.5, 1.0, 64.0}) {
    const auto got = construct_ra_approximant(spec, beta).evaluate(x, {y});
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t l = 0; l < want.size(); ++l) EXPECT_NEAR(got[l], want[l], 1e-12) << "beta=" << beta;
  }
}

TEST(Approximant, ErrorShrinksAsBetaGrows) {
  Rng rng(4);
  int checked = 0;
  while (checked < 20) {
    const auto spec = SelectRelateSpec::from_bilinear(random_forms(4, 3, rng));
    const auto x = normal_vec(4, rng);
    std::vector<std::vector<double>> ys;
    for (int k = 0; k < 6; ++k) ys.push_back(normal_vec(4, rng));
    if (selection_margin(spec, x, ys) < 0.5) continue;
    ++checked;
    const auto want = oracle_select_then_relate(spec, x, ys);
    double prev = INFINITY;
    for (double beta : {1.0, 4.0, 16.0, 64.0}) {
      const auto got = construct_ra_approximant(spec, beta).evaluate(x, ys);
      double err = 0;
      for (std::size_t l = 0; l < want.size(); ++l) err = std::max(err, std::abs(got[l] - want[l]));
      EXPECT_LE(err, prev + 1e-12) << "beta=" << beta;
      prev = err;
    }
    EXPECT_LT(prev, 1e-6);
  }
}

TEST(RelativeError, Definition) {
  EXPECT_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(-1.0, 1.0), 2.0);
  // Below the floor the denominator is the floor.
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0), 1e-9 / 1e-7);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0, 1e-9), 1.0);
}

TEST(Gradcheck, CatchesAWrongGradient) {
  // d/dx sum(x*x) checked against a deliberately scaled analytic route.
  auto x = Tensor<double>::parameter({3}, {0.5, -1.0, 2.0});
  const double ok = gradcheck_fn([&] { return sum_all(mul(x, x)); }, {x});
  EXPECT_LT(ok, 1e-6);
  const double bad = gradcheck_fn([&] { return sum_all(mul(x, scale(x, 1.0).detach())); }, {x});
  EXPECT_GT(bad, 0.1);
}

// ---- library self-checks ---------------------------------------------------

TEST(Checks, OracleEquivalence) {
  const auto r = check_oracle_equivalence(12);
  EXPECT_TRUE(r.passed) << r.detail;
  EXPECT_LE(r.measured, 1e-10);
}

TEST(Checks, ContractionOrder) {
  const auto r = check_contraction_order(12);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Checks, TheoremHarnessIsDeterministicAndConverges) {
  const auto a = theorem_harness(30, {1, 4, 16, 64}, 0.5, 9);
  const auto b = theorem_harness(30, {1, 4, 16, 64}, 0.5, 9);
  EXPECT_EQ(a.sup_error, b.sup_error);
  EXPECT_EQ(a.instances, 30u);
  for (std::size_t k = 1; k < a.sup_error.size(); ++k) EXPECT_LT(a.sup_error[k], a.sup_error[k - 1]);
  EXPECT_LT(a.sup_error.back(), 0.05 * a.max_relation);
  const auto r = check_theorem(30);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Checks, Invariants) {
  const auto all = check_invariants();
  EXPECT_EQ(all.size(), 6u);
  for (const auto& r : all) EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
}

TEST(Checks, OracleCaseSweepCoversEveryCombination) {
  const auto cases = oracle_cases(24);
  std::set<std::tuple<int, bool, bool>> combos;
  for (const auto& c : cases) {
    combos.insert({static_cast<int>(c.sym.kind), c.cfg.symmetric_relations, c.causal});
    EXPECT_LE(c.n, 8u);
    EXPECT_LE(c.cfg.d_model, 32u);
  }
  EXPECT_EQ(combos.size(), 12u);
}

}  // namespace
}  // namespace dat::verify
