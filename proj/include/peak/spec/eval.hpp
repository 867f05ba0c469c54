// Copyright 2026 The Peak Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <vector>

#include "peak/spec/types.hpp"

namespace peak::spec {

// Integer evaluation with truncating division; comparisons and logical
// operators yield 0 or 1. Throws SpecError (DivisionByZero, UnboundName,
// EvaluationError on overflow or float operands).
std::int64_t evaluate(const Expr& expr, const Bindings& bindings);
bool evaluate_predicate(const Expr& expr, const Bindings& bindings);

// Value sets, sorted ascending. Constant sets are duplicate-free by
// construction; size sets are deduplicated and must be strictly positive.
std::vector<ScalarValue> scalar_values(const ScalarDecl& decl);
std::vector<std::int64_t> tuning_values(const TuningDecl& decl);
std::vector<std::int64_t> array_sizes(const ArrayDecl& decl, const Bindings& bindings);
std::vector<std::int64_t> integer_set(const ValueSet& set, const Bindings& bindings);

}  // namespace peak::spec
