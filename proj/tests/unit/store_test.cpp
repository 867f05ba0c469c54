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

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>

#include "peak/error.hpp"
#include "peak/store/store.hpp"
#include "peak/util/fs.hpp"
#include "peak/util/splitmix.hpp"
#include "support/fixtures.hpp"
#include "support/mock_replay.hpp"
#include "support/planted.hpp"

namespace peak::store {
namespace {

using context::KernelContext;

std::string expect_error(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return "none";
}

// A distinct, valid context per index.
KernelContext variant(int i) {
  auto ctx = testing::seed_context();
  ctx.device = "// variant " + std::to_string(i) + "\n" + ctx.device;
  return ctx;
}

std::vector<std::string> listing(const fs::path& root) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.path().filename() == "LOCK") continue;
    out.push_back(fs::relative(e.path(), root).string() +
                  (e.is_regular_file() ? ":" + util::read_file(e.path()) : std::string()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

class StoreTest : public ::testing::Test {
 protected:
  util::TempDir dir{"peak-store"};
  fs::path root() const { return dir.path() / "wf"; }
  Store open() { return Store::open(root(), Store::Mode::write); }
};

TEST_F(StoreTest, SeedCommitHasNoParentAndRestoresByteIdentical) {
  auto s = open();
  const auto seed = testing::seed_context();
  const auto c = s.commit(seed, {});
  EXPECT_EQ(c.id, context::digest(seed).hash);
  EXPECT_FALSE(c.parent);
  EXPECT_FALSE(c.transformation_name);
  EXPECT_EQ(c.seq, 0u);
  EXPECT_EQ(s.canonical_bytes(c.id), context::canonical_serialize(seed));
  EXPECT_EQ(context::digest(s.restore(c.id)).hash, c.id);
  EXPECT_TRUE(fs::exists(root() / "checkpoints" / c.id / "bundle" / "device.src"));
  EXPECT_EQ(s.lineage(c.id), std::vector<std::string>{c.id});
  EXPECT_EQ(expect_error([&] { s.restore(std::string(64, 'a')); }), "UnknownCheckpoint");
  EXPECT_EQ(expect_error([&] { s.get("not-an-id"); }), "UnknownCheckpoint");
}

TEST_F(StoreTest, RecommittingTheSameContextUnderTheSameParentIsIdempotent) {
  auto s = open();
  const auto seed = s.commit(testing::seed_context(), {});
  const auto child_ctx = testing::matmul_stage(1);
  const auto first = s.commit(child_ctx, {seed.id, "refactor", {}, {}, "first"});
  const auto before = listing(root());
  const auto again = s.commit(child_ctx, {seed.id, "refactor", {}, {}, "second"});
  EXPECT_EQ(again.id, first.id);
  EXPECT_EQ(again.note, "first");
  EXPECT_EQ(listing(root()), before);
  EXPECT_EQ(s.commit(testing::seed_context(), {}).id, seed.id);
}

TEST_F(StoreTest, ParentMustExistAndDigestsKeepTheirParent) {
  auto s = open();
  EXPECT_EQ(expect_error([&] { s.commit(variant(1), {std::string(64, 'b')}); }), "UnknownParent");
  const auto a = s.commit(variant(1), {});
  const auto b = s.commit(variant(2), {a.id});
  EXPECT_EQ(expect_error([&] { s.commit(variant(1), {b.id}); }), "DigestCollisionConflict");
  EXPECT_EQ(expect_error([&] { s.commit(variant(2), {}); }), "DigestCollisionConflict");
  EXPECT_EQ(s.list().size(), 2u);
}

TEST_F(StoreTest, LineageIsAParentLinkedPathFromASeed) {
  auto s = open();
  util::SplitMix64 rng(42);
  std::vector<std::string> ids;
  for (int i = 0; i < 40; ++i) {
    CommitRequest r;
    if (!ids.empty() && rng.next() % 5 != 0) r.parent = ids[rng.next() % ids.size()];
    ids.push_back(s.commit(variant(i), r).id);
  }
  std::size_t edges = 0;
  for (const auto& id : ids) {
    const auto path = s.lineage(id);
    EXPECT_FALSE(s.get(path.front()).parent);
    EXPECT_EQ(path.back(), id);
    for (std::size_t i = 1; i < path.size(); ++i) EXPECT_EQ(s.get(path[i]).parent, path[i - 1]);
    for (const auto& child : s.children(id)) EXPECT_EQ(s.get(child).parent, id);
    edges += s.children(id).size();
  }
  std::size_t seeds = 0;
  const auto all = s.list();
  for (std::size_t i = 0; i < all.size(); ++i) {
    EXPECT_EQ(all[i].seq, i);
    seeds += all[i].parent ? 0 : 1;
  }
  EXPECT_EQ(edges + seeds, ids.size());
}

TEST_F(StoreTest, SecondWriterFailsFastAndReadersAreUnrestricted) {
  auto writer = open();
  const auto id = writer.commit(testing::seed_context(), {}).id;
  EXPECT_EQ(expect_error([&] { open(); }), "LockConflict");
  auto reader = Store::open(root(), Store::Mode::read);
  EXPECT_EQ(reader.get(id).id, id);
  EXPECT_FALSE(reader.writable());
  EXPECT_EQ(expect_error([&] { reader.commit(variant(3), {}); }), "ReadOnlyStore");
  EXPECT_EQ(expect_error([&] { reader.set_ref("x", id); }), "ReadOnlyStore");
  { Store moved = std::move(writer); }
  EXPECT_NO_THROW(open());
  EXPECT_EQ(expect_error([&] { Store::open(dir.path() / "nothing", Store::Mode::read); }), "NotAStore");
}

TEST_F(StoreTest, LockHeldByAnotherProcessIsAConflict) {
  int ready[2], release[2];
  ASSERT_EQ(pipe(ready), 0);
  ASSERT_EQ(pipe(release), 0);
  const pid_t pid = fork();
  if (pid == 0) {
    try {
      auto s = Store::open(root(), Store::Mode::write);
      char c = 1;
      (void)!write(ready[1], &c, 1);
      (void)!read(release[0], &c, 1);
    } catch (...) {
      _exit(1);
    }
    _exit(0);
  }
  char c;
  ASSERT_EQ(read(ready[0], &c, 1), 1);
  try {
    open();
    ADD_FAILURE() << "second writer was admitted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "LockConflict");
    EXPECT_NE(std::string(e.what()).find(std::to_string(pid)), std::string::npos) << e.what();
  }
  (void)!write(release[1], &c, 1);
  int status = 0;
  waitpid(pid, &status, 0);
  EXPECT_EQ(WEXITSTATUS(status), 0);
  EXPECT_NO_THROW(open());
}

TEST_F(StoreTest, ThousandCommitsSurviveAProcessRestartByteIdentical) {
  constexpr int kCount = 1000;
  const pid_t pid = fork();
  if (pid == 0) {
    try {
      auto s = Store::open(root(), Store::Mode::write);
      std::string parent;
      for (int i = 0; i < kCount; ++i) {
        CommitRequest r;
        if (i % 10 != 0) r.parent = parent;
        parent = s.commit(variant(i), r).id;
      }
    } catch (...) {
      _exit(1);
    }
    _exit(0);
  }
  int status = 0;
  waitpid(pid, &status, 0);
  ASSERT_TRUE(WIFEXITED(status) && WEXITSTATUS(status) == 0);

  auto s = Store::open(root(), Store::Mode::read);
  EXPECT_EQ(s.list().size(), static_cast<std::size_t>(kCount));
  for (int i = 0; i < kCount; ++i) {
    const auto ctx = variant(i);
    const auto id = context::digest(ctx).hash;
    ASSERT_EQ(s.canonical_bytes(id), context::canonical_serialize(ctx)) << i;
    ASSERT_EQ(context::canonical_serialize(s.restore(id)), context::canonical_serialize(ctx)) << i;
  }
}

TEST_F(StoreTest, RefsAreAMutableNameToIdMap) {
  auto s = open();
  const auto a = s.commit(variant(1), {}).id;
  const auto b = s.commit(variant(2), {a}).id;
  s.set_ref("best-fp32", a);
  EXPECT_EQ(s.resolve_ref("best-fp32"), a);
  s.set_ref("best-fp32", b);
  EXPECT_EQ(s.resolve_ref("best-fp32"), b);
  EXPECT_EQ(expect_error([&] { s.resolve_ref("nope"); }), "UnknownRef");
  EXPECT_EQ(expect_error([&] { s.set_ref("x", std::string(64, 'c')); }), "UnknownCheckpoint");
  EXPECT_EQ(expect_error([&] { s.set_ref("bad name", a); }), "BadRefName");
  EXPECT_EQ(expect_error([&] { s.set_ref("abcd", a); }), "BadRefName");

  EXPECT_EQ(s.resolve("best-fp32"), b);
  EXPECT_EQ(s.resolve(a), a);
  EXPECT_EQ(s.resolve(a.substr(0, 12)), a);
  EXPECT_EQ(expect_error([&] { s.resolve("zzzz"); }), "UnknownCheckpoint");
  EXPECT_EQ(Store::open(root(), Store::Mode::read).refs(), (std::map<std::string, std::string>{{"best-fp32", b}}));
}

TEST_F(StoreTest, DiffOfACheckpointWithItselfIsEmpty) {
  auto s = open();
  const auto a = s.commit(testing::seed_context(), {}).id;
  const auto d = s.diff(a, a);
  EXPECT_TRUE(d.empty());
  EXPECT_FALSE(d.delta.step_speedup);
}

TEST_F(StoreTest, DiffOfSeedAndRefactorTouchesDeviceAndMacrosOnly) {
  auto s = open();
  const auto seed_ctx = testing::seed_context();
  const auto ref_ctx = testing::matmul_stage(1);
  const auto ra = testing::planted_report(seed_ctx, 10.0);
  const auto rb = testing::planted_report(ref_ctx, 2.0);
  const auto a = s.commit(seed_ctx, {{}, {}, {}, ra, {}}).id;
  const auto b = s.commit(ref_ctx, {a, "refactor", {}, rb, {}}).id;
  const auto d = s.diff(a, b);
  EXPECT_FALSE(d.empty());
  EXPECT_FALSE(d.regions.at(context::RegionKind::device).empty());
  EXPECT_FALSE(d.regions.at(context::RegionKind::macros).empty());
  EXPECT_TRUE(d.regions.at(context::RegionKind::host).empty());
  EXPECT_TRUE(d.spec.empty());
  ASSERT_TRUE(d.delta.step_speedup);
  EXPECT_EQ(*d.delta.step_speedup, perf::speedup(rb, ra));
  EXPECT_DOUBLE_EQ(*d.delta.step_speedup, 5.0);
  EXPECT_EQ(d.delta.a_gflops, ra.best_gflops);
  EXPECT_EQ(s.diff(a, b).regions, d.regions);
}

TEST_F(StoreTest, TrajectoryOfThePlantedThreeStepWorkflow) {
  auto s = open();
  std::string parent;
  const double times[] = {100.0, 50.0, 25.0};
  const char* names[] = {nullptr, "refactor", "tb-tiling"};
  for (int i = 0; i < 3; ++i) {
    const auto ctx = testing::matmul_stage(i);
    CommitRequest r;
    if (i > 0) {
      r.parent = parent;
      r.transformation_name = names[i];
    }
    r.perf = testing::planted_report(ctx, times[i]);
    parent = s.commit(ctx, r).id;
  }
  const auto t = s.trajectory(parent, 12.5);
  ASSERT_EQ(t.steps.size(), 3u);
  const double cumulative[] = {1, 2, 4};
  const double step[] = {1, 2, 2};
  const double percent[] = {12.5, 25, 50};
  for (int i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(t.steps[i].cumulative_speedup, cumulative[i]);
    EXPECT_DOUBLE_EQ(t.steps[i].step_speedup, step[i]);
    EXPECT_DOUBLE_EQ(*t.steps[i].percent_of_reference, percent[i]);
    EXPECT_NEAR(*t.steps[i].best_gflops, 2.0 * 64 * 64 * 64 / (times[i] / 1e3) / 1e9, 1e-12);
  }
  EXPECT_EQ(t.steps[2].transformation_name, "tb-tiling");
  EXPECT_EQ(t.input_key, "n=64;A.size=4096;B.size=4096;C.size=4096");
}

TEST_F(StoreTest, TrajectoryCumulativeIsTheProductOfSteps) {
  auto s = open();
  util::SplitMix64 rng(9);
  std::string parent;
  for (int i = 0; i < 25; ++i) {
    const auto ctx = variant(i);
    CommitRequest r;
    if (i > 0) r.parent = parent;
    r.perf = testing::planted_report(ctx, 0.1 + static_cast<double>(rng.next() % 100000) / 997.0);
    parent = s.commit(ctx, r).id;
  }
  const auto t = s.trajectory(parent);
  double product = 1.0;
  bool saw_regression = false;
  for (const auto& step : t.steps) {
    product *= step.step_speedup;
    saw_regression |= step.step_speedup < 1.0;
    EXPECT_NEAR(step.cumulative_speedup, product, 1e-12 * product);
    EXPECT_FALSE(step.percent_of_reference);
  }
  EXPECT_TRUE(saw_regression);
}

TEST_F(StoreTest, TrajectoryEdgeCases) {
  auto s = open();
  const auto seed_ctx = testing::seed_context();
  const auto seed = s.commit(seed_ctx, {{}, {}, {}, testing::planted_report(seed_ctx, 3.0), {}}).id;
  const auto single = s.trajectory(seed);
  ASSERT_EQ(single.steps.size(), 1u);
  EXPECT_EQ(single.steps[0].cumulative_speedup, 1.0);
  EXPECT_EQ(single.steps[0].step_speedup, 1.0);

  const auto slow_ctx = testing::matmul_stage(1);
  const auto slow = s.commit(slow_ctx, {seed, "refactor", {}, testing::planted_report(slow_ctx, 4.0), {}}).id;
  EXPECT_DOUBLE_EQ(s.trajectory(slow).steps[1].step_speedup, 0.75);

  const auto bare = s.commit(testing::matmul_stage(2), {slow, "tb-tiling"}).id;
  try {
    s.trajectory(bare);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "MissingPerfData");
    EXPECT_NE(std::string(e.what()).find(bare), std::string::npos);
  }
  // A key only the tip was measured on names the seed as the offender.
  s.attach_perf(bare, testing::planted_report(testing::matmul_stage(2), 1.0, "n=16"));
  try {
    s.trajectory(bare);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "MissingPerfData");
    EXPECT_NE(std::string(e.what()).find(seed), std::string::npos);
  }
  EXPECT_EQ(expect_error([&] { s.trajectory(seed, 0.0); }), "InvalidQuery");
}

TEST_F(StoreTest, PerfReportsAreKeptPerInputKeyWithTheirSurvivors) {
  auto s = open();
  const auto ctx = testing::seed_context();
  perf::FunctionMeasurer m([](const spec::ExecutionParams& p) {
    return perf::PointResult{{}, backend::RunStatus::ok, static_cast<double>(*p.tuning_value("BLOCK_X")), {}, {}};
  });
  perf::PerfQuery q;
  q.input_key = perf::select_input_key(ctx.spec, "n=64");
  q.keep_top = 4;
  const auto report = perf::evaluate(ctx, q, m);
  const auto id = s.commit(ctx, {{}, {}, {}, report, "note"}).id;
  auto got = s.get(id);
  ASSERT_EQ(got.perf.size(), 1u);
  EXPECT_EQ(perf::to_json(got.perf[0]), perf::to_json(report));
  EXPECT_EQ(to_json(got)["perf"][0]["survivors"], 4);

  s.attach_perf(id, testing::planted_report(ctx, 7.0));
  s.attach_perf(id, testing::planted_report(ctx, 9.0, "n=16"));
  got = s.get(id);
  ASSERT_EQ(got.perf.size(), 2u);
  EXPECT_EQ(got.perf_for(q.input_key)->best.mean_time_ms, 7.0);
  EXPECT_EQ(s.trajectory(id).input_key, "n=16;A.size=256;B.size=256;C.size=256");
}

TEST_F(StoreTest, ValidationReportsAndReferencesArePersisted) {
  auto s = open();
  const auto seed = s.commit(testing::seed_context(), {}).id;
  validation::ValidationReport v;
  v.pass = true;
  v.sampled = 16;
  const auto child = s.commit(testing::matmul_stage(1), {seed, "refactor", v}).id;
  EXPECT_EQ(validation::to_json(*s.get(child).validation), validation::to_json(v));
  EXPECT_FALSE(s.get(seed).validation);
  EXPECT_EQ(expect_error([&] { s.references_for(child); }), "MissingReferences");

  validation::ReferenceStore refs;
  refs.seed_digest = seed;
  s.save_references(refs);
  EXPECT_EQ(s.references_for(child), refs);
  refs.seed_digest = std::string(64, 'd');
  EXPECT_EQ(expect_error([&] { s.save_references(refs); }), "UnknownCheckpoint");
}

}  // namespace
}  // namespace peak::store
