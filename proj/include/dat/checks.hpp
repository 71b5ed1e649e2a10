// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "dat/verification.hpp"

// Self-checks run by `dualattn verify` and the acceptance binary. Each check
// compares the engine against the independent oracles in verification.hpp.

namespace dat::verify {

// ---- random attention instances ------------------------------------------

struct OracleCase {
  DualAttnConfig cfg;
  SymbolConfig sym;
  bool causal = false;
  std::size_t n = 0;
  std::uint64_t seed = 0;

  std::string describe() const;
};

// Deterministic sweep: cycles symbol kinds, symmetry and masking so that
// every combination appears, with head splits, GQA and RoPE varied on top.
// Every case is f64 with n <= 8 and d_model <= 32.
std::vector<OracleCase> oracle_cases(std::size_t count);

struct BuiltCase {
  DualAttention<double> layer;
  SymbolLibrary<double> lib;
  Tensor<double> x;  // [n, d_model]
  AttentionMask mask = AttentionMask::none();
};

// Builds the layer and library, then redraws every parameter at std 0.5 so
// attention is far from uniform.
BuiltCase build_case(const OracleCase& oc, RelVariant variant = RelVariant::Relational);
void redraw(ParamList<double>& params, std::uint64_t seed, double stddev = 0.5);

// ---- checks --------------------------------------------------------------

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;   // worst error (or the check's headline number)
  double tolerance = 0.0;
  std::string detail;
  double seconds = 0.0;
};

// Sensory, relational, dual and RCA outputs (and relation tensors) against
// the loop references.
CheckResult check_oracle_equivalence(std::size_t instances = 24, double tol = 1e-10);

// Every parameter of a 2-layer encoder and a 2-layer causal decoder by
// central differences.
CheckResult check_model_gradients(double tol = 1e-4);

// The engine's factored W_r order and the factored loop reference against
// the literal loop reference.
CheckResult check_contraction_order(std::size_t instances = 24, double tol = 1e-10);

struct TheoremReport {
  std::vector<double> betas;
  std::vector<double> sup_error;  // max over instances of max_l |approx - oracle|
  double max_relation = 0.0;      // max over instances of max_l |oracle|
  std::size_t instances = 0;
  std::size_t rejected = 0;       // draws discarded by the margin filter
};

// Random bilinear select-then-relate instances with selection margin >= the
// given margin; one spec, query and context per instance.
TheoremReport theorem_harness(std::size_t instances, const std::vector<double>& betas, double margin,
                              std::uint64_t seed);
// Passes when sup_error strictly decreases over betas {1, 4, 16, 64} and the
// last one is below rel_tol * max_relation.
CheckResult check_theorem(std::size_t instances = 100, double margin = 0.5, double rel_tol = 0.05);

// Causal invariance of decoder logits, exact symmetric relations,
// symbolic-attention convex hull membership, GQA degenerate equality, the
// RCA reduction and checkpoint round trip; one result per property.
std::vector<CheckResult> check_invariants();

}  // namespace dat::verify
