// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "dat/ops.hpp"
#include "oracle_cases.hpp"

namespace dat {
namespace {

using testing::build;
using testing::oracle_cases;
using testing::randn;
using verify::Mode;
using verify::to_mat;

double max_diff(const verify::Mat& a, const Tensor<double>& b) {
  return testing::max_abs_diff(a.v, b.data());
}

RelVariant variant_of(Mode m) { return m == Mode::Rca ? RelVariant::Rca : RelVariant::Relational; }

class OracleSweep : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OracleSweep, EveryModeMatchesLoopReference) {
  const auto oc = oracle_cases(24)[GetParam()];
  SCOPED_TRACE(oc.describe());
  for (Mode mode : {Mode::Sensory, Mode::Relational, Mode::Dual, Mode::Rca}) {
    if (mode == Mode::Sensory && !oc.cfg.n_h_sa) continue;
    if ((mode == Mode::Relational || mode == Mode::Rca) && !oc.cfg.n_h_ra) continue;
    auto b = build(oc, variant_of(mode));
    const auto sym = b.lib.assign(b.x);
    const auto ref_sym = verify::reference_symbols(b.lib, to_mat(b.x));
    const auto ref = verify::reference_attention(b.layer, to_mat(b.x), &ref_sym, b.mask, mode);
    Tensor<double> got;
    switch (mode) {
      case Mode::Sensory: got = b.layer.sensory(b.x, b.mask); break;
      case Mode::Relational: {
        auto r = b.layer.relational(b.x, sym, b.mask);
        got = r.y;
        EXPECT_LT(testing::max_abs_diff(ref.relations, r.relations.data()), 1e-10);
        break;
      }
      case Mode::Rca: got = b.layer.rca(b.x, sym, b.mask); break;
      case Mode::Dual: got = b.layer.forward(b.x, &sym, b.mask).y; break;
    }
    EXPECT_LT(max_diff(ref.y, got), 1e-10) << "mode " << static_cast<int>(mode);
  }
}

TEST_P(OracleSweep, FactoredOrderEqualsLiteralOrder) {
  const auto oc = oracle_cases(24)[GetParam()];
  if (!oc.cfg.n_h_ra) GTEST_SKIP() << "no relational heads";
  auto b = build(oc);
  const auto ref_sym = verify::reference_symbols(b.lib, to_mat(b.x));
  const auto lit =
      verify::reference_attention(b.layer, to_mat(b.x), &ref_sym, b.mask, Mode::Relational, verify::Order::Literal);
  const auto fac =
      verify::reference_attention(b.layer, to_mat(b.x), &ref_sym, b.mask, Mode::Relational, verify::Order::Factored);
  EXPECT_LT(testing::max_abs_diff(lit.y.v, std::span<const double>(fac.y.v)), 1e-10);
}

TEST_P(OracleSweep, BatchedEqualsPerSequence) {
  auto oc = oracle_cases(24)[GetParam()];
  auto b = build(oc);
  Rng rng(oc.seed + 7);
  auto xb = randn<double>({3, oc.n, oc.cfg.d_model}, rng, 1.0, false);
  const auto sym_b = b.lib.assign(xb);
  const auto yb = b.layer.forward(xb, &sym_b, b.mask).y;
  for (std::size_t s = 0; s < 3; ++s) {
    auto xs = Tensor<double>({oc.n, oc.cfg.d_model},
                             std::vector<double>(xb.data().begin() + s * oc.n * oc.cfg.d_model,
                                                 xb.data().begin() + (s + 1) * oc.n * oc.cfg.d_model));
    const auto sym = b.lib.assign(xs);
    const auto ys = b.layer.forward(xs, &sym, b.mask).y;
    for (std::size_t i = 0; i < ys.numel(); ++i)
      EXPECT_NEAR(ys.at(i), yb.at(s * ys.numel() + i), 1e-12);
  }
}

INSTANTIATE_TEST_SUITE_P(Attention, OracleSweep, ::testing::Range<std::size_t>(0, 24));

DualAttnConfig small_cfg(std::size_t sa, std::size_t ra, std::size_t d = 16, std::size_t dr = 4) {
  DualAttnConfig c;
  c.d_model = d;
  c.n_h_sa = sa;
  c.n_h_ra = ra;
  c.d_r = dr;
  return c;
}

testing::OracleCase make_case(DualAttnConfig cfg, std::size_t n, std::uint64_t seed,
                              SymbolKind kind = SymbolKind::Positional, bool causal = false) {
  testing::OracleCase oc;
  oc.cfg = cfg;
  oc.n = n;
  oc.seed = seed;
  oc.causal = causal;
  oc.sym.kind = kind;
  oc.sym.max_len = 16;
  oc.sym.max_rel = 3;
  oc.sym.n_symbols = 5;
  return oc;
}

TEST(Sensory, SingleElementIsValueProjection) {
  auto b = build(make_case(small_cfg(2, 0), 1, 1));
  auto y = b.layer.sensory(b.x, b.mask);
  auto ref = add(matmul(matmul(b.x, b.layer.sa.W_v), b.layer.sa.W_o), b.layer.sa.b_o);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.at(i), ref.at(i), 1e-13);
}

TEST(Sensory, IdenticalRowsGiveIdenticalOutputs) {
  auto b = build(make_case(small_cfg(2, 0), 5, 2));
  std::vector<double> rows;
  for (int i = 0; i < 5; ++i) rows.insert(rows.end(), b.x.data().begin(), b.x.data().begin() + 16);
  auto y = b.layer.sensory(Tensor<double>({5, 16}, rows), b.mask);
  for (std::size_t i = 1; i < 5; ++i)
    for (std::size_t c = 0; c < 16; ++c) EXPECT_NEAR(y.at(i * 16 + c), y.at(c), 1e-14);
}

TEST(Relational, SingleElementClosedForm) {
  auto b = build(make_case(small_cfg(0, 2), 1, 3));
  auto sym = b.lib.assign(b.x);
  auto y = b.layer.relational(b.x, sym, b.mask).y;
  // (r(x,x) W_r + s W_s) W_o per head, with r(x,x)[l] = <x W_q_rel_l, x W_k_rel_l>.
  const auto& cfg = b.layer.config();
  auto qr = to_mat(matmul(b.x, b.layer.ra.W_q_rel)), kr = to_mat(matmul(b.x, b.layer.ra.W_k_rel));
  auto sw = to_mat(matmul(sym.values.rank() == 3 ? reshape(sym.values, {1, 16}) : sym.values, b.layer.ra.W_s));
  std::vector<double> head(16, 0.0);
  const std::size_t dh = cfg.d_head(), p = cfg.d_proj();
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t t = 0; t < dh; ++t) {
      double v = sw(0, h * dh + t);
      for (std::size_t l = 0; l < cfg.d_r; ++l) {
        double r = 0;
        for (std::size_t u = 0; u < p; ++u) r += qr(0, l * p + u) * kr(0, l * p + u);
        v += r * b.layer.ra.W_r.at((h * cfg.d_r + l) * dh + t);
      }
      head[h * dh + t] = v;
    }
  auto ref = add(matmul(Tensor<double>({1, 16}, head), b.layer.ra.W_o), b.layer.ra.b_o);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(y.at(i), ref.at(i), 1e-12);
}

TEST(Rca, SingleElementReturnsProjectedSymbol) {
  auto b = build(make_case(small_cfg(0, 2), 1, 4), RelVariant::Rca);
  auto sym = b.lib.assign(b.x);
  auto y = b.layer.rca(b.x, sym, b.mask);
  auto s = reshape(sym.values, {1, 16});
  auto ref = add(matmul(matmul(s, b.layer.ra.W_s), b.layer.ra.W_o), b.layer.ra.b_o);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(y.at(i), ref.at(i), 1e-13);
}

TEST(Rca, EqualsRelationalWithZeroRelationMapExactly) {
  for (SymbolKind kind : {SymbolKind::Positional, SymbolKind::PositionRelative, SymbolKind::SymbolicAttention}) {
    auto b = build(make_case(small_cfg(1, 3, 16, 2), 6, 5, kind, true));
    auto sym = b.lib.assign(b.x);
    for (auto& v : b.layer.ra.W_r.mutable_data()) v = 0.0;
    auto rel = b.layer.relational(b.x, sym, b.mask).y;
    auto rca = b.layer.rca(b.x, sym, b.mask);
    for (std::size_t i = 0; i < rel.numel(); ++i) ASSERT_EQ(rel.at(i), rca.at(i)) << to_string(kind);
  }
}

TEST(Dual, DegenerateSplitsAreBitwiseEqualToSingleType) {
  auto b = build(make_case(small_cfg(2, 0), 5, 6));
  auto y = b.layer.forward(b.x, nullptr, b.mask).y, s = b.layer.sensory(b.x, b.mask);
  for (std::size_t i = 0; i < y.numel(); ++i) ASSERT_EQ(y.at(i), s.at(i));

  auto r = build(make_case(small_cfg(0, 2), 5, 7));
  auto sym = r.lib.assign(r.x);
  auto yr = r.layer.forward(r.x, &sym, r.mask).y, rr = r.layer.relational(r.x, sym, r.mask).y;
  for (std::size_t i = 0; i < yr.numel(); ++i) ASSERT_EQ(yr.at(i), rr.at(i));
}

TEST(Dual, HeadBudgetAndSensorySliceIsolation) {
  auto b = build(make_case(small_cfg(1, 3), 5, 8));
  auto sym = b.lib.assign(b.x);
  auto y = b.layer.forward(b.x, &sym, b.mask).y;
  ASSERT_EQ(y.shape(), (Shape{5, 16}));
  // Perturbing every relational parameter leaves the sensory slice untouched.
  for (auto* t : {&b.layer.ra.W_q_attn, &b.layer.ra.W_q_rel, &b.layer.ra.W_s, &b.layer.ra.W_r, &b.layer.ra.W_o})
    for (auto& v : t->mutable_data()) v += 0.3;
  auto y2 = b.layer.forward(b.x, &sym, b.mask).y;
  const std::size_t sa_w = b.layer.config().n_h_sa * b.layer.config().d_head();
  bool changed = false;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 16; ++c) {
      if (c < sa_w)
        ASSERT_EQ(y.at(i * 16 + c), y2.at(i * 16 + c));
      else
        changed |= y.at(i * 16 + c) != y2.at(i * 16 + c);
    }
  EXPECT_TRUE(changed);
}

TEST(Dual, EvenSplitVisionConfigAccepted) {
  auto c = small_cfg(6, 6, 384, 8);
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.d_head(), 32u);
  EXPECT_EQ(c.n_h_sa * c.d_head() + c.n_h_ra * c.d_head(), 384u);
}

TEST(Dual, ConfigErrors) {
  EXPECT_THROW(small_cfg(0, 0).validate(), ConfigError);
  EXPECT_THROW(small_cfg(3, 0, 16).validate(), ConfigError);    // 16 not divisible by 3 heads
  EXPECT_THROW(small_cfg(1, 1, 8, 8).validate(), ConfigError);   // d_h * n_h_ra = 4 < d_r
  EXPECT_THROW(small_cfg(1, 1, 16, 3).validate(), ConfigError);  // d_r does not divide 8
  auto rope = small_cfg(2, 0, 6);
  rope.pos_encoding = PosEncoding::RoPE;  // d_key 3 is odd
  EXPECT_THROW(rope.validate(), ConfigError);
  auto gqa = small_cfg(2, 2);
  gqa.n_kv_heads = 3;
  EXPECT_THROW(gqa.validate(), ConfigError);
}

TEST(Dual, FullyMaskedRowIsAnError) {
  auto b = build(make_case(small_cfg(1, 1), 3, 9));
  auto sym = b.lib.assign(b.x);
  auto mask = AttentionMask::explicit_matrix(3, {1, 0, 0, 0, 0, 0, 1, 1, 1});
  EXPECT_THROW(b.layer.forward(b.x, &sym, mask), MaskError);
}

TEST(Dual, SymbolShapeMismatchIsAnError) {
  auto b = build(make_case(small_cfg(1, 1), 4, 10));
  Symbols<double> wrong{SymbolKind::PositionRelative, Tensor<double>({4, 16}, 0.0)};
  EXPECT_THROW(b.layer.forward(b.x, &wrong, b.mask), DimensionError);
  EXPECT_THROW(b.layer.forward(b.x, nullptr, b.mask), DimensionError);
}

// Perturbing rows j > i never changes output row i under a causal mask.
TEST(Invariants, CausalInvarianceEveryVariant) {
  for (SymbolKind kind : {SymbolKind::Positional, SymbolKind::PositionRelative, SymbolKind::SymbolicAttention})
    for (RelVariant variant : {RelVariant::Relational, RelVariant::Rca}) {
      auto b = build(make_case(small_cfg(2, 2), 7, 11, kind, true), variant);
      Rng rng(12);
      for (std::size_t cut = 0; cut < 6; ++cut) {
        auto x2 = b.x.clone();
        for (std::size_t i = cut + 1; i < 7; ++i)
          for (std::size_t c = 0; c < 16; ++c) x2.mutable_data()[i * 16 + c] += rng.normal() * 3.0;
        auto s1 = b.lib.assign(b.x), s2 = b.lib.assign(x2);
        auto outs = [&](const Tensor<double>& x, const Symbols<double>& s) {
          std::vector<Tensor<double>> o{b.layer.forward(x, &s, b.mask).y, b.layer.sensory(x, b.mask)};
          o.push_back(variant == RelVariant::Rca ? b.layer.rca(x, s, b.mask) : b.layer.relational(x, s, b.mask).y);
          return o;
        };
        auto o1 = outs(b.x, s1), o2 = outs(x2, s2);
        for (std::size_t v = 0; v < o1.size(); ++v) {
          const std::size_t w = o1[v].dim(-1);
          for (std::size_t i = 0; i <= cut; ++i)
            for (std::size_t c = 0; c < w; ++c)
              ASSERT_LE(std::abs(o1[v].at(i * w + c) - o2[v].at(i * w + c)), 1e-12)
                  << to_string(kind) << " output " << v << " row " << i;
        }
      }
    }
}

TEST(Invariants, SymmetricRelationsAreBitIdenticalUnderTranspose) {
  auto cfg = small_cfg(2, 2, 32, 8);
  cfg.symmetric_relations = true;
  auto b = build(make_case(cfg, 8, 13));
  EXPECT_FALSE(b.layer.ra.W_k_rel.defined());
  auto r = b.layer.relations(b.x);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      for (std::size_t l = 0; l < 8; ++l) ASSERT_EQ(r.at((i * 8 + j) * 8 + l), r.at((j * 8 + i) * 8 + l));
}

// Copies every parameter of src into dst element-wise (same names, shapes).
void copy_params(const DualAttention<double>& src, DualAttention<double>& dst) {
  ParamList<double> a, b;
  src.collect(a, "");
  dst.collect(b, "");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].tensor.shape(), b[i].tensor.shape()) << a[i].name;
    std::copy(a[i].tensor.data().begin(), a[i].tensor.data().end(), b[i].tensor.mutable_data().begin());
  }
}

TEST(Invariants, GqaWithOneKvHeadPerQueryHeadEqualsUngrouped) {
  auto cfg = small_cfg(2, 2);
  auto b = build(make_case(cfg, 6, 14, SymbolKind::Positional, true));
  cfg.n_kv_heads = 4;
  Rng rng(0);
  DualAttention<double> grouped(cfg, true, 0.02, rng);
  copy_params(b.layer, grouped);
  auto sym = b.lib.assign(b.x);
  auto y1 = b.layer.forward(b.x, &sym, b.mask).y, y2 = grouped.forward(b.x, &sym, b.mask).y;
  for (std::size_t i = 0; i < y1.numel(); ++i) ASSERT_EQ(y1.at(i), y2.at(i));
}

// A grouped layer equals an ungrouped one whose K (and V) projections repeat
// each group's columns for every query head in the group.
TEST(Invariants, GqaEqualsUngroupedWithDuplicatedKeys) {
  auto cfg = small_cfg(2, 4, 24, 4);
  cfg.n_kv_heads = 3;  // 1 sensory group, 2 relational groups
  auto b = build(make_case(cfg, 6, 15, SymbolKind::PositionRelative));
  auto flat = cfg;
  flat.n_kv_heads = 0;
  Rng rng(0);
  DualAttention<double> full(flat, true, 0.02, rng);
  ParamList<double> src, dst;
  b.layer.collect(src, "");
  full.collect(dst, "");
  const std::size_t dk = cfg.d_key();
  auto expand = [&](const Tensor<double>& g, Tensor<double>& f, std::size_t heads, std::size_t groups) {
    const std::size_t d = g.dim(0), gw = g.dim(1), fw = f.dim(1);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t t = 0; t < dk; ++t)
          f.mutable_data()[r * fw + h * dk + t] = g.at(r * gw + (h / (heads / groups)) * dk + t);
  };
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto& name = src[i].name;
    if (name == "sa.W_k" || name == "sa.W_v")
      expand(src[i].tensor, dst[i].tensor, cfg.n_h_sa, cfg.kv_sa());
    else if (name == "ra.W_k_attn")
      expand(src[i].tensor, dst[i].tensor, cfg.n_h_ra, cfg.kv_ra());
    else
      std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), dst[i].tensor.mutable_data().begin());
  }
  auto sym = b.lib.assign(b.x);
  auto y1 = b.layer.forward(b.x, &sym, b.mask).y, y2 = full.forward(b.x, &sym, b.mask).y;
  for (std::size_t i = 0; i < y1.numel(); ++i) EXPECT_NEAR(y1.at(i), y2.at(i), 1e-13);
}

TEST(Invariants, GqaSharesOnlyKeysAndValues) {
  auto cfg = small_cfg(2, 2);
  cfg.n_kv_heads = 2;
  Rng rng(0);
  DualAttention<double> layer(cfg, false, 0.02, rng);
  EXPECT_EQ(layer.sa.W_k.shape(), (Shape{16, 4}));
  EXPECT_EQ(layer.sa.W_v.shape(), (Shape{16, 4}));
  EXPECT_EQ(layer.ra.W_k_attn.shape(), (Shape{16, 4}));
  EXPECT_EQ(layer.ra.W_q_attn.shape(), (Shape{16, 8}));
  EXPECT_EQ(layer.ra.W_s.shape(), (Shape{16, 8}));
}

TEST(Gradcheck, EveryDualAttentionParameter) {
  for (SymbolKind kind : {SymbolKind::Positional, SymbolKind::PositionRelative, SymbolKind::SymbolicAttention})
    for (bool symmetric : {false, true}) {
      auto cfg = small_cfg(2, 2, 16, 4);
      cfg.symmetric_relations = symmetric;
      auto b = build(make_case(cfg, 4, 16, kind, true));
      ParamList<double> params;
      b.layer.collect(params, "");
      b.lib.collect(params);
      testing::redraw(params, 17, 0.3);
      std::vector<Tensor<double>> inputs;
      for (auto& p : params) inputs.push_back(p.tensor);
      const auto w = testing::loss_weights(4 * 16, 18);
      auto loss = [&] {
        auto sym = b.lib.assign(b.x);
        auto y = b.layer.forward(b.x, &sym, b.mask).y;
        return sum_all(mul(y, Tensor<double>(y.shape(), w)));
      };
      EXPECT_LT(verify::gradcheck_fn(loss, inputs, 1e-5, 1e-3), 1e-5) << to_string(kind) << " " << symmetric;
    }
}

TEST(Rope, OnlyAttentionMapsAreRotated) {
  auto cfg = small_cfg(0, 2);
  auto b = build(make_case(cfg, 5, 19));
  auto rope_cfg = cfg;
  rope_cfg.pos_encoding = PosEncoding::RoPE;
  Rng rng(0);
  DualAttention<double> rotated(rope_cfg, true, 0.02, rng);
  copy_params(b.layer, rotated);
  auto r1 = b.layer.relations(b.x), r2 = rotated.relations(b.x);
  for (std::size_t i = 0; i < r1.numel(); ++i) ASSERT_EQ(r1.at(i), r2.at(i));
  auto sym = b.lib.assign(b.x);
  auto y1 = b.layer.forward(b.x, &sym, b.mask).y, y2 = rotated.forward(b.x, &sym, b.mask).y;
  EXPECT_GT(testing::max_abs_diff(y1.data(), y2.data()), 1e-6);
}

TEST(Cross, MatchesManualSingleHead) {
  Rng rng(20);
  CrossAttention<double> ca(8, 1, true, 0.02, rng);
  ParamList<double> params;
  ca.collect(params, "");
  testing::redraw(params, 21);
  auto x = randn<double>({3, 8}, rng, 1.0, false), y = randn<double>({5, 8}, rng, 1.0, false);
  auto out = ca.forward(x, y);
  auto q = matmul(x, ca.W_q), k = matmul(y, ca.W_k), v = matmul(y, ca.W_v);
  auto a = softmax(scale(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(8.0)), -1);
  auto ref = add(matmul(matmul(a, v), ca.W_o), ca.b_o);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out.at(i), ref.at(i), 1e-12);
}

}  // namespace
}  // namespace dat
