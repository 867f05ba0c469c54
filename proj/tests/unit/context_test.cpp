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

#include "peak/context/context.hpp"
#include "peak/error.hpp"
#include "peak/spec/printer.hpp"
#include "peak/util/fs.hpp"
#include "support/fixtures.hpp"

namespace peak::context {
namespace {

using testing::raw_context;
using testing::seed_context;

std::string code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

KernelContext tiled_k_context() {
  return make_context("__global__ void k(float* a) { for (int kk = 0; kk < @TUNE(TILE_K_SIZE); ++kk) a[kk] = 0; }",
                      "void launch(float* a) { PEAK_LAUNCH(k, dim3(1), dim3(1), a); }", "",
                      spec::parse_spec("input a: array<f32> size in {64} init zeros\n"
                                       "tune TILE_K_SIZE: i32 in {8, 16}"),
                      "cpu-ref", "k");
}

TEST(SubstituteTuning, ReplacesPlaceholderWithDecimalValue) {
  const auto ctx = tiled_k_context();
  const auto all = spec::enumerate_execution_params(ctx.spec);
  ASSERT_EQ(all[1].tuning_value("TILE_K_SIZE"), 16);
  const auto out = substitute_tuning(ctx, all[1]);
  EXPECT_NE(out.device.find("for (int kk = 0; kk < 16; ++kk)"), std::string::npos);
  EXPECT_EQ(out.device.find("@TUNE("), std::string::npos);
  EXPECT_EQ(out.host, ctx.host);
}

TEST(SubstituteTuning, NoTuningIsIdentity) {
  const auto ctx = make_context("__global__ void k() {}", "void launch() { PEAK_LAUNCH(k, dim3(1), dim3(1)); }",
                                "#define X 1", spec::parse_spec("input n: i32 in {1}"), "cpu-ref", "k");
  const auto out = substitute_tuning(ctx, spec::enumerate_execution_params(ctx.spec).front());
  EXPECT_EQ(out.device, ctx.device);
  EXPECT_EQ(out.host, ctx.host);
  EXPECT_EQ(out.macros, ctx.macros);
}

TEST(SubstituteTuning, Errors) {
  const auto ctx = raw_context("input n: i32 in {1}", "void k() { int x = @TUNE(FOO); }", "void launch() {}");
  const auto params = spec::enumerate_execution_params(ctx.spec).front();
  EXPECT_EQ(code_of([&] { substitute_tuning(ctx, params); }), "UnknownPlaceholder");
  const auto declared = raw_context("input n: i32 in {1}\ntune FOO: i32 in {2}", "void k() { int x = @TUNE(FOO); }",
                                    "void launch() {}");
  spec::ExecutionParams partial = params;
  EXPECT_EQ(code_of([&] { substitute_tuning(declared, partial); }), "MissingTuningValue");
}

TEST(SubstituteTuning, TotalityOverSeedSpace) {
  const auto ctx = seed_context();
  for (const auto& p : spec::enumerate_execution_params(ctx.spec)) {
    const auto out = substitute_tuning(ctx, p);
    for (const auto* text : {&out.device, &out.host, &out.macros}) {
      EXPECT_EQ(text->find("@TUNE("), std::string::npos);
    }
  }
}

TEST(ContextInvariants, ClosureChecks) {
  const auto spec_text = "input n: i32 in {1}\ntune T: i32 in {1}";
  EXPECT_EQ(code_of([&] {
              make_context("void k() {}", "void launch() {}", "", spec::parse_spec(spec_text), "cpu-ref", "k");
            }),
            "OrphanDeclaration");
  EXPECT_EQ(code_of([&] {
              make_context("void k() { @TUNE(U); }", "void launch() {}", "", spec::parse_spec(spec_text), "cpu-ref",
                           "k");
            }),
            "OrphanPlaceholder");
  EXPECT_EQ(code_of([&] {
              make_context("void g() { @TUNE(T); }", "void launch() {}", "", spec::parse_spec(spec_text), "cpu-ref",
                           "k");
            }),
            "MissingKernelName");
  EXPECT_EQ(code_of([&] {
              make_context("void k() { @TUNE(T); }", "  \n", "", spec::parse_spec(spec_text), "cpu-ref", "k");
            }),
            "EmptyRegion");
  EXPECT_EQ(code_of([&] {
              make_context("void k() {}", "void launch() { @TUNE(T); }", "", spec::parse_spec(spec_text), "cpu-ref",
                           "k");
            }),
            "");
}

TEST(ReplaceRegion, Behaviour) {
  const auto seed = seed_context();
  const auto with_macros = replace_region(seed, RegionKind::macros, "#define TIDX (threadIdx.x)\n");
  EXPECT_NE(digest(with_macros), digest(seed));
  EXPECT_EQ(with_macros.device, seed.device);
  EXPECT_EQ(with_macros.host, seed.host);

  EXPECT_EQ(digest(replace_region(seed, RegionKind::device, seed.device)), digest(seed));

  EXPECT_EQ(code_of([&] { replace_region(seed, RegionKind::device, seed.device + "// @TUNE(NEW)\n"); }),
            "OrphanPlaceholder");
}

TEST(ReplaceRegion, NormalizesLineEndings) {
  const auto seed = seed_context();
  auto crlf = seed.device;
  for (std::size_t at = 0; (at = crlf.find('\n', at)) != std::string::npos; at += 2) crlf.insert(at, "\r");
  EXPECT_EQ(digest(replace_region(seed, RegionKind::device, crlf)), digest(seed));
}

TEST(Serialize, RoundTripAndDeterminism) {
  const auto seed = seed_context();
  const auto bytes = canonical_serialize(seed);
  EXPECT_EQ(bytes, canonical_serialize(seed));
  const auto back = canonical_deserialize(bytes);
  EXPECT_TRUE(back == seed);
  EXPECT_TRUE(spec::equal(back.spec, seed.spec));
  EXPECT_EQ(canonical_serialize(back), bytes);
  EXPECT_EQ(digest(back), digest(seed));
}

TEST(Serialize, RejectsGarbage) {
  EXPECT_EQ(code_of([] { canonical_deserialize("nope"); }), "MalformedContext");
  auto bytes = canonical_serialize(seed_context());
  EXPECT_EQ(code_of([&] { canonical_deserialize(bytes.substr(0, bytes.size() - 3)); }), "MalformedContext");
  EXPECT_EQ(code_of([&] { canonical_deserialize(bytes + "x"); }), "MalformedContext");
}

TEST(Digest, LabelExcludedOtherFieldsIncluded) {
  const auto seed = seed_context();
  auto relabeled = seed;
  relabeled.label = "something else";
  EXPECT_NE(canonical_serialize(relabeled), canonical_serialize(seed));
  EXPECT_EQ(digest(relabeled), digest(seed));

  auto other_backend = seed;
  other_backend.backend = "cuda";
  EXPECT_NE(digest(other_backend), digest(seed));

  auto other_spec = seed;
  other_spec.spec = spec::parse_spec(spec::print_spec(seed.spec) + "constraint n > 16\n");
  EXPECT_NE(digest(other_spec), digest(seed));

  EXPECT_EQ(digest(seed).hash.size(), 64u);
  EXPECT_EQ(digest(seed).short_form(), digest(seed).hash.substr(0, 12));
}

TEST(Digest, AnySingleByteChangeInARegionChangesIt) {
  const auto seed = seed_context();
  const auto base = digest(seed);
  std::mt19937 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    auto mutated = seed;
    auto& text = mutated.region(kAllRegions[trial % 2]);
    const auto at = rng() % text.size();
    text[at] = text[at] == 'x' ? 'y' : 'x';
    EXPECT_NE(digest(mutated), base);
  }
}

TEST(Bundle, SaveLoadRoundTrip) {
  util::TempDir dir;
  auto seed = seed_context();
  seed.label = "round trip";
  save_bundle(seed, dir.path() / "b");
  for (const char* f : {"device.src", "host.src", "macros.src", "spec.pspec", "meta"}) {
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "b" / f)) << f;
  }
  const auto back = load_bundle(dir.path() / "b");
  EXPECT_EQ(canonical_serialize(back), canonical_serialize(seed));
}

TEST(Regions, ParseAndPrint) {
  for (const auto k : kAllRegions) EXPECT_EQ(parse_region(to_string(k)), k);
  EXPECT_EQ(code_of([] { parse_region("kernel"); }), "BadRegion");
}

}  // namespace
}  // namespace peak::context
