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

#include <gtest/gtest.h>

#include <random>
#include <set>

#include "peak/spec/enumerate.hpp"
#include "peak/spec/eval.hpp"
#include "peak/spec/parser.hpp"
#include "peak/spec/printer.hpp"
#include "support/spec_oracle.hpp"

namespace peak::spec {
namespace {

constexpr std::string_view kMatmulGpuSpec = R"(# seed matmul, GPU sizes
input n: i32 in {2048, 4096}
input A: array<f32> size in {n*n} init random(1)
input B: array<f32> size in {n*n} init random(2)
output C: array<f32> size in {n*n} init zeros
tune BLOCK_X: i32 in pow2(1..=1024)
tune BLOCK_Y: i32 in pow2(1..=1024)
constraint BLOCK_X * BLOCK_Y <= 1024
)";

std::string error_code(std::string_view src) {
  try {
    parse_spec(src);
  } catch (const SpecError& e) {
    return e.code();
  }
  return "";
}

TEST(ParseSpec, RepresentativeExample) {
  const auto spec = parse_spec(
      "input n: i32 in {2048, 4096}\ninput A: array<f32> size in {n*n} init random(7)\n"
      "output C: array<f32> size in {n*n} init zeros\ntune TK: i32 in {8,16,32}");
  EXPECT_EQ(spec.scalars.size(), 1u);
  EXPECT_EQ(spec.arrays.size(), 2u);
  EXPECT_EQ(spec.tuning.size(), 1u);
  EXPECT_FALSE(spec.arrays[0].is_output);
  EXPECT_TRUE(spec.arrays[1].is_output);
  EXPECT_EQ(spec.arrays[0].init.kind, InitKind::random);
  EXPECT_EQ(spec.arrays[0].init.seed, 7u);
}

TEST(ParseSpec, EmptySourceIsSyntaxError) {
  EXPECT_EQ(error_code(""), "SyntaxError");
  EXPECT_EQ(error_code("# only a comment\n\n"), "SyntaxError");
}

TEST(ParseSpec, UndeclaredNameInSize) {
  try {
    parse_spec("input n: i32 in {4}\ninput A: array<f32> size in {m} init zeros");
    FAIL() << "expected NameError";
  } catch (const SpecError& e) {
    EXPECT_EQ(e.code(), "NameError");
    EXPECT_NE(std::string(e.what()).find("'m'"), std::string::npos);
    EXPECT_EQ(e.pos().line, 2);
  }
}

TEST(ParseSpec, ErrorCases) {
  EXPECT_EQ(error_code("input n: i32 in {4}\ninput n: i32 in {8}"), "NameError");
  EXPECT_EQ(error_code("input n: i32 in {1.5}"), "TypeError");
  EXPECT_EQ(error_code("input x: f32 in {0.5, 1}\nconstraint x > 0"), "TypeError");
  EXPECT_EQ(error_code("input n: i32 in {4, 4}"), "ValueError");
  EXPECT_EQ(error_code("input n: i32 in range(4, 4)"), "ValueError");
  EXPECT_EQ(error_code("tune tile: i32 in {4}"), "SyntaxError");
  EXPECT_EQ(error_code("input n: i32 in {4} extra"), "SyntaxError");
  EXPECT_EQ(error_code("frobnicate n"), "SyntaxError");
  EXPECT_EQ(error_code("input n: i32 in {4}\nconstraint n + 1"), "TypeError");
  EXPECT_EQ(error_code("input n: i32 in {4}\nconstraint B.size == n"), "NameError");
  // sizes may only use scalars declared earlier, never tuning parameters
  EXPECT_EQ(error_code("input A: array<f32> size in {n} init zeros\ninput n: i32 in {4}"), "NameError");
  EXPECT_EQ(error_code("tune T: i32 in {4}\ninput A: array<f32> size in {T} init zeros"), "NameError");
  EXPECT_EQ(error_code("output n: i32 in {4}"), "SyntaxError");
}

TEST(ParseSpec, ValueSetForms) {
  const auto spec = parse_spec("input a: i32 in range(0, 10, 3)\ninput b: i32 in pow2(3..=40)\n"
                               "input c: i32 in {9, -2, 5}\ninput h: f16 in {0.5, 1.25}");
  EXPECT_EQ(integer_set(spec.scalars[0].values, {}), (std::vector<std::int64_t>{0, 3, 6, 9}));
  EXPECT_EQ(integer_set(spec.scalars[1].values, {}), (std::vector<std::int64_t>{4, 8, 16, 32}));
  EXPECT_EQ(integer_set(spec.scalars[2].values, {}), (std::vector<std::int64_t>{-2, 5, 9}));
  const auto halves = scalar_values(spec.scalars[3]);
  ASSERT_EQ(halves.size(), 2u);
  EXPECT_EQ(std::get<Half>(halves[0]).bits, 0x3800);  // 0.5
  EXPECT_EQ(std::get<Half>(halves[1]).bits, 0x3d00);  // 1.25
}

TEST(EvaluateExpr, Arithmetic) {
  EXPECT_EQ(evaluate(*parse_expr("n*n"), {{"n", 2048}}), 4194304);
  EXPECT_EQ(evaluate(*parse_expr("7 / 2"), {}), 3);
  EXPECT_EQ(evaluate(*parse_expr("-7 / 2"), {}), -3);
  EXPECT_EQ(evaluate(*parse_expr("-7 % 3"), {}), -1);
  EXPECT_EQ(evaluate(*parse_expr("1 + 2 * 3 - 4"), {}), 3);
}

TEST(EvaluateExpr, SizeAttributePredicate) {
  EXPECT_TRUE(evaluate_predicate(*parse_expr("A.size == m * k"), {{"A.size", 12}, {"m", 3}, {"k", 4}}));
  EXPECT_FALSE(evaluate_predicate(*parse_expr("A.size == m * k"), {{"A.size", 13}, {"m", 3}, {"k", 4}}));
}

TEST(EvaluateExpr, Errors) {
  try {
    evaluate(*parse_expr("n % TK"), {{"n", 2048}, {"TK", 0}});
    FAIL();
  } catch (const SpecError& e) {
    EXPECT_EQ(e.code(), "DivisionByZero");
  }
  try {
    evaluate(*parse_expr("n + q"), {{"n", 1}});
    FAIL();
  } catch (const SpecError& e) {
    EXPECT_EQ(e.code(), "UnboundName");
  }
  try {
    evaluate(*parse_expr("9223372036854775807 + 1"), {});
    FAIL();
  } catch (const SpecError& e) {
    EXPECT_EQ(e.code(), "EvaluationError");
  }
}

TEST(Enumerate, MatmulSeedSpaceHas132Points) {
  const int per_n = testing::pow2_pairs_within(10, 10);
  ASSERT_EQ(per_n, 66);
  const auto spec = parse_spec(kMatmulGpuSpec);
  const auto all = enumerate_execution_params(spec);
  EXPECT_EQ(all.size(), static_cast<std::size_t>(2 * per_n));
  for (const auto& p : all) {
    EXPECT_LE(*p.tuning_value("BLOCK_X") * *p.tuning_value("BLOCK_Y"), 1024);
    EXPECT_EQ(*p.array_size("A"), std::int64_t{std::get<std::int32_t>(*p.scalar("n"))} *
                                      std::get<std::int32_t>(*p.scalar("n")));
  }
  // declaration order, ascending values, last declaration fastest
  EXPECT_EQ(std::get<std::int32_t>(*all.front().scalar("n")), 2048);
  EXPECT_EQ(all[0].tuning_label(), "BLOCK_X=1,BLOCK_Y=1");
  EXPECT_EQ(all[1].tuning_label(), "BLOCK_X=1,BLOCK_Y=2");
  EXPECT_EQ(std::get<std::int32_t>(*all.back().scalar("n")), 4096);
  EXPECT_EQ(all.back().tuning_label(), "BLOCK_X=1024,BLOCK_Y=1");
}

TEST(Enumerate, SingletonAndUnsatisfiable) {
  EXPECT_EQ(enumerate_execution_params(parse_spec("input n: i32 in {4}")).size(), 1u);
  EXPECT_TRUE(enumerate_execution_params(parse_spec("input n: i32 in {4}\nconstraint 1 == 0")).empty());
  EXPECT_TRUE(enumerate_execution_params(parse_spec("input n: i32 in {4}\nconstraint false")).empty());
}

TEST(Enumerate, DivisionByZeroInConstraint) {
  const auto spec = parse_spec("input n: i32 in {4}\ntune T: i32 in {0, 2}\nconstraint n % T == 0");
  try {
    enumerate_execution_params(spec);
    FAIL();
  } catch (const SpecError& e) {
    EXPECT_EQ(e.code(), "EvaluationError");
  }
}

TEST(Enumerate, MatchesBruteForceOracle) {
  std::mt19937_64 rng(20260101);
  for (int trial = 0; trial < 300; ++trial) {
    const auto gen = testing::random_spec(rng);
    const auto text = gen.text();
    SCOPED_TRACE(text);
    const auto spec = parse_spec(text);
    std::vector<testing::Row> got;
    for (const auto& p : enumerate_execution_params(spec)) {
      EXPECT_TRUE(satisfies_constraints(spec, p));
      got.push_back(testing::to_row(p));
    }
    ASSERT_EQ(got, testing::brute_force(gen));
  }
}

TEST(PrintSpec, RoundTripOverGeneratedSpecs) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const auto spec = parse_spec(testing::random_spec(rng).text());
    const auto printed = print_spec(spec);
    SCOPED_TRACE(printed);
    EXPECT_TRUE(equal(parse_spec(printed), spec));
    EXPECT_EQ(print_spec(parse_spec(printed)), printed);
  }
}

TEST(PrintSpec, ParenthesisationAndLiterals) {
  const auto spec = parse_spec(
      "input x: f32 in {1.0, 0.1, 1e-05, -2.5}\ninput n: i32 in {-3, 4}\n"
      "constraint (n - (n - 1)) * -(n + 2) != 0 || !(n < 0 && n > -10)");
  EXPECT_TRUE(equal(parse_spec(print_spec(spec)), spec));
  EXPECT_NE(print_spec(spec).find("(n - (n - 1)) * -(n + 2)"), std::string::npos);
}

TEST(Sample, DeterministicSubsetWithCoverage) {
  const auto spec = parse_spec(kMatmulGpuSpec);
  const auto all = enumerate_execution_params(spec);
  const auto s1 = sample_execution_params(spec, 16, 1);
  const auto again = sample_execution_params(spec, 16, 1);
  const auto s2 = sample_execution_params(spec, 16, 2);
  EXPECT_EQ(s1.size(), 16u);
  EXPECT_EQ(s1, again);
  EXPECT_EQ(s2.size(), 16u);
  EXPECT_NE(s1, s2);
  for (const auto* sample : {&s1, &s2}) {
    std::set<std::string> labels;
    bool has_min = false, has_max = false;
    for (const auto& p : *sample) {
      EXPECT_NE(std::find(all.begin(), all.end(), p), all.end());
      labels.insert(p.label());
      const auto n = std::get<std::int32_t>(*p.scalar("n"));
      has_min |= n == 2048;
      has_max |= n == 4096;
    }
    EXPECT_EQ(labels.size(), sample->size());
    EXPECT_TRUE(has_min && has_max);
  }
}

TEST(Sample, BudgetBeyondSpaceReturnsEverything) {
  const auto spec = parse_spec(kMatmulGpuSpec);
  EXPECT_EQ(sample_execution_params(spec, 1000, 3), enumerate_execution_params(spec));
  EXPECT_THROW(sample_execution_params(spec, 0, 3), SpecError);
}

TEST(Sample, PropertyOverGeneratedSpecs) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const auto spec = parse_spec(testing::random_spec(rng).text());
    const auto all = enumerate_execution_params(spec);
    const std::size_t budget = 1 + rng() % 8;
    const auto s = sample_execution_params(spec, budget, trial);
    EXPECT_EQ(s.size(), std::min(budget, all.size()));
    EXPECT_EQ(s, sample_execution_params(spec, budget, trial));
    std::size_t cursor = 0;
    for (const auto& p : s) {
      // subset, in enumeration order
      while (cursor < all.size() && !(all[cursor] == p)) ++cursor;
      ASSERT_LT(cursor, all.size());
      ++cursor;
    }
  }
}

}  // namespace
}  // namespace peak::spec
