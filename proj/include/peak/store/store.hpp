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

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "peak/context/context.hpp"
#include "peak/perf/perf.hpp"
#include "peak/validation/validation.hpp"

namespace peak::store {

namespace fs = std::filesystem;

struct Checkpoint {
  std::string id;  // ContextDigest::hash
  std::optional<std::string> parent;
  std::optional<std::string> transformation_name;
  std::string created_at;  // ISO 8601 UTC
  std::string note;
  std::uint64_t seq = 0;  // commit order within the store
  std::optional<validation::ValidationReport> validation;
  std::vector<perf::PerfReport> perf;  // at most one per input key

  const perf::PerfReport* perf_for(const spec::InputKey& key) const;
};

nlohmann::json to_json(const Checkpoint& c);  // metadata only, reports summarized

struct MetadataDelta {
  std::optional<double> a_best_ms;
  std::optional<double> b_best_ms;
  std::optional<double> a_gflops;
  std::optional<double> b_gflops;
  std::optional<double> step_speedup;  // of b over a, on a shared input key
  std::optional<std::string> input_key;
};

struct StoreDiff {
  std::map<context::RegionKind, std::string> regions;  // unified diffs, empty when equal
  std::string spec;
  std::string meta;  // backend, kernel name and label changes
  MetadataDelta delta;

  bool empty() const;
};

nlohmann::json to_json(const StoreDiff& d);

struct TrajectoryStep {
  std::string id;
  std::optional<std::string> transformation_name;
  double best_time_ms = 0.0;
  double cumulative_speedup = 1.0;
  double step_speedup = 1.0;
  std::optional<double> best_gflops;
  std::optional<double> percent_of_reference;
};

struct Trajectory {
  std::string input_key;
  std::vector<TrajectoryStep> steps;  // seed first
};

nlohmann::json to_json(const Trajectory& t);

struct CommitRequest {
  std::optional<std::string> parent;
  std::optional<std::string> transformation_name;
  std::optional<validation::ValidationReport> validation;
  std::optional<perf::PerfReport> perf;
  std::string note;
};

// A workflow root:
//   <root>/LOCK                          writer lock (flock)
//   <root>/checkpoints/<id>/context.bin  canonical bytes
//   <root>/checkpoints/<id>/bundle/      human-readable regions
//   <root>/checkpoints/<id>/meta.json, validation.json, perf.json
//   <root>/references/<seed-id>/         reference outputs of a seed
//   <root>/refs.json
class Store {
 public:
  enum class Mode { read, write };

  // Write mode takes the root's exclusive lock without waiting;
  // Error("LockConflict") when another writer holds it.
  // Read mode requires an existing root (Error("NotAStore")).
  static Store open(const fs::path& root, Mode mode);

  Store(Store&& other) noexcept;
  Store& operator=(Store&& other) noexcept;
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;
  ~Store();

  const fs::path& root() const noexcept { return root_; }
  bool writable() const noexcept { return lock_fd_ >= 0; }

  // Errors: UnknownParent, DigestCollisionConflict, LineageCycle, ReadOnlyStore.
  // Committing an identical context under the same parent returns the
  // existing checkpoint and leaves the store unchanged.
  Checkpoint commit(const context::KernelContext& ctx, const CommitRequest& request);
  // Adds or replaces the report for its input key. Errors: UnknownCheckpoint.
  void attach_perf(const std::string& id, const perf::PerfReport& report);

  bool contains(const std::string& id) const;
  // Error("UnknownCheckpoint").
  Checkpoint get(const std::string& id) const;
  context::KernelContext restore(const std::string& id) const;
  std::string canonical_bytes(const std::string& id) const;
  // Every checkpoint in commit order.
  std::vector<Checkpoint> list() const;
  std::vector<std::string> children(const std::string& id) const;
  // Seed first, `id` last.
  std::vector<std::string> lineage(const std::string& id) const;

  // Ref name, full id or unique id prefix (at least 4 characters).
  // Errors: UnknownCheckpoint, AmbiguousId.
  std::string resolve(const std::string& text) const;

  // Names match [A-Za-z0-9][A-Za-z0-9._-]*. Errors: BadRefName, UnknownCheckpoint.
  void set_ref(const std::string& name, const std::string& id);
  // Error("UnknownRef").
  std::string resolve_ref(const std::string& name) const;
  std::map<std::string, std::string> refs() const;

  void save_references(const validation::ReferenceStore& refs);
  // References of the seed at the root of `id`'s lineage. Error("MissingReferences").
  validation::ReferenceStore references_for(const std::string& id) const;

  StoreDiff diff(const std::string& a, const std::string& b) const;
  // Error("MissingPerfData") naming the first checkpoint on the path without
  // a report for the chosen key. Without `input_key`, the tip's most recent
  // report selects the key.
  Trajectory trajectory(const std::string& tip, std::optional<double> reference_time_ms = {},
                        const std::optional<std::string>& input_key = {}) const;

 private:
  Store(fs::path root, int lock_fd);
  fs::path dir_of(const std::string& id) const;
  void require_writable() const;
  void write_perf(const std::string& id, const std::vector<perf::PerfReport>& reports);

  fs::path root_;
  int lock_fd_ = -1;
};

}  // namespace peak::store
