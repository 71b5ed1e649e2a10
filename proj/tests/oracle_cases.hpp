// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dat/checks.hpp"
#include "test_util.hpp"

// The random attention instances live in the library so `dualattn verify`
// and the acceptance binary sweep the same cases as the unit tests.

namespace dat::testing {

using verify::BuiltCase;
using verify::OracleCase;
using verify::oracle_cases;
using verify::redraw;

inline BuiltCase build(const OracleCase& oc, RelVariant variant = RelVariant::Relational) {
  return verify::build_case(oc, variant);
}

}  // namespace dat::testing
