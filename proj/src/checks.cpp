// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include "dat/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <sstream>

#include <Eigen/Dense>

#include "dat/checkpoint.hpp"

namespace dat::verify {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

Tensor<double> gaussian(Shape shape, Rng& rng, double stddev) {
  std::vector<double> v(shape_numel(shape));
  for (auto& e : v) e = rng.normal() * stddev;
  return Tensor<double>(std::move(shape), std::move(v));
}

RelVariant variant_of(Mode m) { return m == Mode::Rca ? RelVariant::Rca : RelVariant::Relational; }

}  // namespace

std::string OracleCase::describe() const {
  return "seed=" + std::to_string(seed) + " d=" + std::to_string(cfg.d_model) + " sa=" + std::to_string(cfg.n_h_sa) +
         " ra=" + std::to_string(cfg.n_h_ra) + " d_r=" + std::to_string(cfg.d_r) +
         " kv=" + std::to_string(cfg.n_kv_heads) + " sym=" + to_string(sym.kind) +
         (cfg.symmetric_relations ? " symmetric" : "") + (causal ? " causal" : "") +
         (cfg.pos_encoding == PosEncoding::RoPE ? " rope" : "") + " n=" + std::to_string(n);
}

std::vector<OracleCase> oracle_cases(std::size_t count) {
  struct Split {
    std::size_t d, sa, ra, dr, kv;
  };
  // kv = 0 means one kv head per query head.
  const Split splits[] = {{8, 1, 1, 2, 0},  {16, 2, 2, 4, 0}, {16, 0, 2, 2, 0}, {24, 1, 2, 8, 0},
                          {32, 2, 2, 4, 2}, {16, 2, 2, 2, 2}, {32, 0, 4, 4, 2}, {32, 4, 4, 8, 4},
                          {24, 2, 4, 4, 0}, {32, 2, 2, 16, 0}};
  std::vector<OracleCase> out;
  for (std::size_t c = 0; c < count; ++c) {
    Rng rng(9000 + c);
    const Split s = splits[c % std::size(splits)];
    OracleCase oc;
    oc.seed = 9000 + c;
    oc.cfg.d_model = s.d;
    oc.cfg.n_h_sa = s.sa;
    oc.cfg.n_h_ra = s.ra;
    oc.cfg.d_r = s.dr;
    oc.cfg.n_kv_heads = s.kv;
    oc.cfg.symmetric_relations = (c / 3) % 2 == 1;
    oc.causal = (c / 2) % 2 == 1;
    oc.cfg.pos_encoding = c % 5 == 4 ? PosEncoding::RoPE : PosEncoding::None;
    oc.sym.kind = static_cast<SymbolKind>(c % 3);
    oc.sym.max_len = 8;
    oc.sym.max_rel = 2;
    oc.sym.n_symbols = 6;
    oc.sym.n_sym_heads = s.d % 16 == 0 ? 2 : 1;
    oc.n = 1 + rng.below(8);
    out.push_back(oc);
  }
  return out;
}

void redraw(ParamList<double>& params, std::uint64_t seed, double stddev) {
  Rng rng(seed);
  for (auto& p : params)
    for (auto& v : p.tensor.mutable_data()) v = rng.normal() * stddev;
}

BuiltCase build_case(const OracleCase& oc, RelVariant variant) {
  Rng rng(oc.seed);
  auto cfg = oc.cfg;
  cfg.rel_variant = variant;
  DualAttention<double> layer(cfg, true, 0.02, rng);
  SymbolLibrary<double> lib(oc.sym, cfg.d_model, rng);
  auto x = gaussian({oc.n, cfg.d_model}, rng, 1.0);
  BuiltCase b{std::move(layer), std::move(lib), std::move(x),
              oc.causal ? AttentionMask::causal() : AttentionMask::none()};
  ParamList<double> params;
  b.layer.collect(params, "");
  b.lib.collect(params);
  redraw(params, oc.seed + 1);
  return b;
}

CheckResult check_oracle_equivalence(std::size_t instances, double tol) {
  const auto t0 = Clock::now();
  CheckResult r{"oracle_equivalence", true, 0.0, tol, "", 0.0};
  std::size_t compared = 0;
  std::string worst;
  for (const auto& oc : oracle_cases(instances)) {
    for (Mode mode : {Mode::Sensory, Mode::Relational, Mode::Dual, Mode::Rca}) {
      if (mode == Mode::Sensory && !oc.cfg.n_h_sa) continue;
      if ((mode == Mode::Relational || mode == Mode::Rca) && !oc.cfg.n_h_ra) continue;
      auto b = build_case(oc, variant_of(mode));
      NoGradGuard guard;
      const auto sym = b.lib.assign(b.x);
      const auto ref_sym = reference_symbols(b.lib, to_mat(b.x));
      const auto ref = reference_attention(b.layer, to_mat(b.x), &ref_sym, b.mask, mode);
      Tensor<double> got;
      double err = 0.0;
      switch (mode) {
        case Mode::Sensory: got = b.layer.sensory(b.x, b.mask); break;
        case Mode::Relational: {
          auto out = b.layer.relational(b.x, sym, b.mask);
          got = out.y;
          err = max_abs_diff(ref.relations, out.relations.data());
          break;
        }
        case Mode::Rca: got = b.layer.rca(b.x, sym, b.mask); break;
        case Mode::Dual: got = b.layer.forward(b.x, &sym, b.mask).y; break;
      }
      err = std::max(err, max_abs_diff(ref.y.v, got.data()));
      ++compared;
      if (err > r.measured) {
        r.measured = err;
        worst = oc.describe();
      }
    }
  }
  r.passed = r.measured < tol;
  r.detail = std::to_string(instances) + " instances, " + std::to_string(compared) + " comparisons, max err " +
             fmt(r.measured) + (worst.empty() ? "" : " at " + worst);
  r.seconds = since(t0);
  return r;
}

CheckResult check_model_gradients(double tol) {
  const auto t0 = Clock::now();
  CheckResult r{"model_gradients", true, 0.0, tol, "", 0.0};
  auto base = [] {
    ModelConfig c;
    c.n_layers = 2;
    c.attn.d_model = 16;
    c.attn.n_h_sa = 2;
    c.attn.n_h_ra = 2;
    c.attn.d_r = 4;
    c.d_ff = 24;
    c.vocab = 11;
    c.max_len = 12;
    c.symbols.max_len = 12;
    c.symbols.max_rel = 3;
    c.symbols.n_symbols = 5;
    c.n_classes = 3;
    c.seed = 5;
    return c;
  };
  auto enc = base();
  enc.arch = Arch::EncoderOnly;
  enc.symbols.kind = SymbolKind::SymbolicAttention;
  auto dec = base();
  dec.arch = Arch::DecoderOnly;
  dec.symbols.kind = SymbolKind::PositionRelative;
  dec.attn.symmetric_relations = true;
  dec.activation = Activation::SwiGLU;
  std::size_t n_params = 0, n_entries = 0;
  std::vector<std::string> failing;
  GradcheckOptions opt;
  opt.threshold = tol;
  for (const auto* cfg : {&enc, &dec}) {
    const auto rep = gradcheck_model(*cfg, 31, opt);
    for (const auto& p : rep.params) {
      ++n_params;
      n_entries += p.checked;
      r.measured = std::max(r.measured, p.max_rel_err);
      if (!p.passed) failing.push_back(std::string(to_string(cfg->arch)) + ":" + p.name);
    }
  }
  r.passed = failing.empty() && r.measured < tol;
  r.detail = "2-layer encoder + 2-layer decoder, " + std::to_string(n_params) + " tensors, " +
             std::to_string(n_entries) + " entries, max rel err " + fmt(r.measured);
  for (std::size_t i = 0; i < failing.size() && i < 5; ++i) r.detail += (i ? ", " : "; failing: ") + failing[i];
  r.seconds = since(t0);
  return r;
}

CheckResult check_contraction_order(std::size_t instances, double tol) {
  const auto t0 = Clock::now();
  CheckResult r{"contraction_order", true, 0.0, tol, "", 0.0};
  std::size_t used = 0;
  for (const auto& oc : oracle_cases(instances)) {
    if (!oc.cfg.n_h_ra) continue;
    ++used;
    auto b = build_case(oc);
    NoGradGuard guard;
    const auto ref_sym = reference_symbols(b.lib, to_mat(b.x));
    const auto lit = reference_attention(b.layer, to_mat(b.x), &ref_sym, b.mask, Mode::Relational, Order::Literal);
    const auto fac = reference_attention(b.layer, to_mat(b.x), &ref_sym, b.mask, Mode::Relational, Order::Factored);
    const auto engine = b.layer.relational(b.x, b.lib.assign(b.x), b.mask).y;
    r.measured = std::max({r.measured, max_abs_diff(lit.y.v, fac.y.v), max_abs_diff(lit.y.v, engine.data())});
  }
  r.passed = r.measured < tol;
  r.detail = std::to_string(used) + " instances with relational heads, max |factored - literal| " + fmt(r.measured);
  r.seconds = since(t0);
  return r;
}

TheoremReport theorem_harness(std::size_t instances, const std::vector<double>& betas, double margin,
                              std::uint64_t seed) {
  TheoremReport rep;
  rep.betas = betas;
  rep.sup_error.assign(betas.size(), 0.0);
  Rng rng(seed);
  constexpr std::size_t dim = 4, d_r = 3;
  while (rep.instances < instances) {
    if (rep.rejected > 1000 * instances) throw VerificationError("margin filter rejects almost every draw");
    BilinearForms forms;
    forms.dim = dim;
    auto draw = [&] {
      Mat m(dim, dim);
      for (auto& v : m.v) v = rng.normal() / std::sqrt(static_cast<double>(dim));
      return m;
    };
    forms.A = draw();
    for (std::size_t l = 0; l < d_r; ++l) forms.B.push_back(draw());
    const auto spec = SelectRelateSpec::from_bilinear(std::move(forms));
    const std::size_t n = 2 + rng.below(7);
    std::vector<double> x(dim);
    for (auto& v : x) v = rng.normal();
    std::vector<std::vector<double>> ys(n, std::vector<double>(dim));
    for (auto& y : ys)
      for (auto& v : y) v = rng.normal();
    if (selection_margin(spec, x, ys) < margin) {
      ++rep.rejected;
      continue;
    }
    const auto want = oracle_select_then_relate(spec, x, ys);
    for (double v : want) rep.max_relation = std::max(rep.max_relation, std::abs(v));
    for (std::size_t k = 0; k < betas.size(); ++k) {
      const auto got = construct_ra_approximant(spec, betas[k]).evaluate(x, ys);
      rep.sup_error[k] = std::max(rep.sup_error[k], max_abs_diff(got, want));
    }
    ++rep.instances;
  }
  return rep;
}

CheckResult check_theorem(std::size_t instances, double margin, double rel_tol) {
  const auto t0 = Clock::now();
  const auto rep = theorem_harness(instances, {1.0, 4.0, 16.0, 64.0}, margin, 2024);
  CheckResult r{"select_then_relate", true, 0.0, rel_tol, "", 0.0};
  bool decreasing = true;
  for (std::size_t k = 1; k < rep.sup_error.size(); ++k) decreasing &= rep.sup_error[k] < rep.sup_error[k - 1];
  r.measured = rep.sup_error.back() / rep.max_relation;
  r.passed = decreasing && r.measured < rel_tol;
  r.detail = std::to_string(rep.instances) + " instances (margin >= " + fmt(margin) + ", " +
             std::to_string(rep.rejected) + " rejected), sup err";
  for (std::size_t k = 0; k < rep.betas.size(); ++k)
    r.detail += " b" + fmt(rep.betas[k]) + "=" + fmt(rep.sup_error[k]);
  r.detail += ", max |Rel| " + fmt(rep.max_relation) + (decreasing ? "" : ", NOT decreasing");
  r.seconds = since(t0);
  return r;
}

namespace {

CheckResult causal_invariance() {
  CheckResult r{"causal_invariance", true, 0.0, 1e-12, "", 0.0};
  for (SymbolKind kind : {SymbolKind::Positional, SymbolKind::PositionRelative, SymbolKind::SymbolicAttention}) {
    ModelConfig c;
    c.arch = Arch::DecoderOnly;
    c.attn.d_model = 16;
    c.attn.d_r = 4;
    c.d_ff = 24;
    c.vocab = 11;
    c.max_len = 12;
    c.symbols.kind = kind;
    c.symbols.max_len = 12;
    c.symbols.max_rel = 3;
    c.symbols.n_symbols = 5;
    Model<double> m(c);
    auto params = m.parameters();
    redraw(params, 40, 0.4);
    Rng rng(41);
    ModelInput in;
    in.batch = 1;
    in.len = 8;
    for (std::size_t i = 0; i < 8; ++i) in.tokens.push_back(static_cast<std::int32_t>(rng.below(11)));
    const auto base = m.forward(in);
    for (std::size_t cut = 0; cut < 7; ++cut) {
      auto alt = in;
      for (std::size_t j = cut + 1; j < 8; ++j) alt.tokens[j] = (alt.tokens[j] + 3) % 11;
      const auto y = m.forward(alt);
      for (std::size_t i = 0; i < (cut + 1) * 11; ++i)
        r.measured = std::max(r.measured, std::abs(base.at(i) - y.at(i)));
    }
  }
  r.passed = r.measured <= r.tolerance;
  r.detail = "decoder logits, 3 symbol kinds x 7 cut points, max past change " + fmt(r.measured);
  return r;
}

CheckResult symmetric_relations() {
  CheckResult r{"symmetric_relations", true, 0.0, 0.0, "", 0.0};
  std::size_t mismatches = 0;
  for (const auto& base : oracle_cases(12)) {
    auto oc = base;
    if (!oc.cfg.n_h_ra) continue;
    oc.cfg.symmetric_relations = true;
    oc.n = 8;
    auto b = build_case(oc);
    NoGradGuard guard;
    const auto rel = b.layer.relations(b.x);
    const std::size_t n = oc.n, dr = oc.cfg.d_r;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t l = 0; l < dr; ++l) {
          const double a = rel.at((i * n + j) * dr + l), t = rel.at((j * n + i) * dr + l);
          if (std::memcmp(&a, &t, sizeof a) != 0) ++mismatches;
          r.measured = std::max(r.measured, std::abs(a - t));
        }
  }
  r.passed = mismatches == 0;
  r.detail = "bitwise r_ij == r_ji, " + std::to_string(mismatches) + " mismatching entries";
  return r;
}

CheckResult convex_hull() {
  CheckResult r{"symbolic_convex_hull", true, 0.0, 1e-6, "", 0.0};
  double min_weight = 0.0;
  for (std::size_t heads : {1u, 2u}) {
    // Per-head width 8 exceeds n_s = 4, so barycentric weights are unique.
    const std::size_t d = 8 * heads, ns = 4;
    SymbolConfig sc;
    sc.kind = SymbolKind::SymbolicAttention;
    sc.n_symbols = ns;
    sc.n_sym_heads = heads;
    Rng rng(50 + heads);
    SymbolLibrary<double> lib(sc, d, rng);
    ParamList<double> params;
    lib.collect(params);
    redraw(params, 60 + heads, 1.0);
    NoGradGuard guard;
    const auto s = lib.symbolic_attention(gaussian({6, d}, rng, 1.0));
    for (std::size_t h = 0; h < heads; ++h) {
      Eigen::MatrixXd S(ns, 8);
      for (std::size_t a = 0; a < ns; ++a)
        for (std::size_t c = 0; c < 8; ++c)
          S(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) = lib.S_lib.at(a * d + h * 8 + c);
      // Least squares with sum(w) = 1 through the KKT system.
      Eigen::MatrixXd K = Eigen::MatrixXd::Zero(ns + 1, ns + 1);
      K.topLeftCorner(ns, ns) = S * S.transpose();
      K.block(0, ns, ns, 1).setOnes();
      K.block(ns, 0, 1, ns).setOnes();
      const auto lu = K.fullPivLu();
      for (std::size_t i = 0; i < 6; ++i) {
        Eigen::VectorXd y(8);
        for (std::size_t c = 0; c < 8; ++c) y(static_cast<Eigen::Index>(c)) = s.at(i * d + h * 8 + c);
        Eigen::VectorXd rhs(ns + 1);
        rhs.head(ns) = S * y;
        rhs(ns) = 1.0;
        const Eigen::VectorXd w = lu.solve(rhs).head(ns);
        r.measured = std::max(r.measured, (S.transpose() * w - y).norm());
        min_weight = std::min(min_weight, w.minCoeff());
      }
    }
  }
  r.passed = r.measured < r.tolerance && min_weight > -1e-9;
  r.detail = "1 and 2 heads, max residual " + fmt(r.measured) + ", min weight " + fmt(min_weight);
  return r;
}

void copy_params(const DualAttention<double>& src, DualAttention<double>& dst) {
  ParamList<double> a, b;
  src.collect(a, "");
  dst.collect(b, "");
  for (std::size_t i = 0; i < a.size(); ++i)
    std::copy(a[i].tensor.data().begin(), a[i].tensor.data().end(), b[i].tensor.mutable_data().begin());
}

CheckResult gqa_degenerate() {
  CheckResult r{"gqa_degenerate", true, 0.0, 0.0, "", 0.0};
  std::size_t mismatches = 0;
  for (const auto& base : oracle_cases(10)) {
    auto oc = base;
    oc.cfg.n_kv_heads = 0;
    auto b = build_case(oc);
    auto grouped_cfg = oc.cfg;
    grouped_cfg.n_kv_heads = oc.cfg.n_heads();
    Rng rng(0);
    DualAttention<double> grouped(grouped_cfg, true, 0.02, rng);
    copy_params(b.layer, grouped);
    NoGradGuard guard;
    const auto sym = b.lib.assign(b.x);
    const auto y1 = b.layer.forward(b.x, &sym, b.mask).y, y2 = grouped.forward(b.x, &sym, b.mask).y;
    for (std::size_t i = 0; i < y1.numel(); ++i) {
      if (y1.at(i) != y2.at(i)) ++mismatches;
      r.measured = std::max(r.measured, std::abs(y1.at(i) - y2.at(i)));
    }
  }
  r.passed = mismatches == 0;
  r.detail = "n_kv_heads = n_heads vs ungrouped, " + std::to_string(mismatches) + " differing outputs";
  return r;
}

CheckResult rca_reduction() {
  CheckResult r{"rca_reduction", true, 0.0, 0.0, "", 0.0};
  std::size_t mismatches = 0;
  for (const auto& oc : oracle_cases(12)) {
    if (!oc.cfg.n_h_ra) continue;
    auto b = build_case(oc);
    for (auto& v : b.layer.ra.W_r.mutable_data()) v = 0.0;
    NoGradGuard guard;
    const auto sym = b.lib.assign(b.x);
    const auto rel = b.layer.relational(b.x, sym, b.mask).y;
    const auto rca = b.layer.rca(b.x, sym, b.mask);
    for (std::size_t i = 0; i < rel.numel(); ++i) {
      if (rel.at(i) != rca.at(i)) ++mismatches;
      r.measured = std::max(r.measured, std::abs(rel.at(i) - rca.at(i)));
    }
  }
  r.passed = mismatches == 0;
  r.detail = "relational with W_r = 0 vs rca, " + std::to_string(mismatches) + " differing outputs";
  return r;
}

CheckResult checkpoint_round_trip() {
  CheckResult r{"checkpoint_round_trip", true, 0.0, 0.0, "", 0.0};
  ModelConfig c;
  c.arch = Arch::EncoderDecoder;
  c.attn.d_model = 16;
  c.attn.n_h_sa = 2;
  c.attn.n_h_ra = 2;
  c.attn.d_r = 4;
  c.attn.n_kv_heads = 2;
  c.symbols.kind = SymbolKind::SymbolicAttention;
  c.symbols.n_symbols = 5;
  c.d_ff = 24;
  c.vocab = 9;
  c.max_len = 10;
  c.seed = 3;
  std::size_t mismatches = 0, tensors = 0;
  for (int pass = 0; pass < 2; ++pass) {
    auto check = [&](auto tag) {
      using T = decltype(tag);
      Model<T> m(c);
      auto params = m.parameters();
      Rng rng(70);
      for (auto& p : params)
        for (auto& v : p.tensor.mutable_data()) v = static_cast<T>(rng.normal());
      const auto back = decode_checkpoint<T>(encode_checkpoint(m));
      const auto got = back.parameters();
      if (got.size() != params.size()) ++mismatches;
      for (std::size_t i = 0; i < std::min(got.size(), params.size()); ++i) {
        ++tensors;
        const auto a = params[i].tensor.data(), b = got[i].tensor.data();
        if (got[i].name != params[i].name || a.size() != b.size() ||
            std::memcmp(a.data(), b.data(), a.size_bytes()) != 0)
          ++mismatches;
      }
    };
    if (pass == 0) check(float{});
    else check(double{});
  }
  r.passed = mismatches == 0;
  r.detail = std::to_string(tensors) + " tensors (f32 and f64), " + std::to_string(mismatches) + " not bit-identical";
  return r;
}

}  // namespace

std::vector<CheckResult> check_invariants() {
  std::vector<CheckResult> out;
  for (auto fn : {causal_invariance, symmetric_relations, convex_hull, gqa_degenerate, rca_reduction,
                  checkpoint_round_trip}) {
    const auto t0 = Clock::now();
    try {
      out.push_back(fn());
    } catch (const std::exception& e) {
      out.push_back({"invariant", false, 0.0, 0.0, std::string("threw: ") + e.what(), 0.0});
    }
    out.back().seconds = since(t0);
  }
  return out;
}

}  // namespace dat::verify
