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
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "peak/backend/backend.hpp"
#include "peak/context/context.hpp"
#include "peak/spec/types.hpp"

namespace peak::perf {

namespace fs = std::filesystem;
using TuningValues = spec::NamedValues<std::int64_t>;

std::string tuning_label(const TuningValues& tuning);

// Outcome of measuring one execution parameter set.
struct PointResult {
  spec::ExecutionParams params;
  backend::RunStatus status = backend::RunStatus::ok;
  double mean_time_ms = 0.0;
  std::vector<double> run_times_ms;
  std::string detail;
};

class Measurer {
 public:
  virtual ~Measurer() = default;
  virtual std::vector<PointResult> measure(std::span<const spec::ExecutionParams> points) = 0;
};

// Compiles and runs points through the backend batch executor.
class RuntimeMeasurer : public Measurer {
 public:
  RuntimeMeasurer(context::KernelContext ctx, backend::Runtime& runtime, backend::TimingPolicy policy,
                  int parallel_compile = 1);
  std::vector<PointResult> measure(std::span<const spec::ExecutionParams> points) override;

 private:
  context::KernelContext ctx_;
  backend::Runtime& runtime_;
  backend::TimingPolicy policy_;
  int parallel_compile_;
};

// Measures with a caller-supplied function, for synthetic landscapes.
class FunctionMeasurer : public Measurer {
 public:
  using Fn = std::function<PointResult(const spec::ExecutionParams&)>;
  explicit FunctionMeasurer(Fn fn) : fn_(std::move(fn)) {}
  std::vector<PointResult> measure(std::span<const spec::ExecutionParams> points) override;
  std::size_t calls() const { return calls_; }

 private:
  Fn fn_;
  std::size_t calls_ = 0;
};

// ---- tuner plugins ----

// Maps tuning values to a mean time in ms, or nullopt for an invalid point.
// Values outside the declared domain are rejected without being executed.
using MeasureFn = std::function<std::optional<double>(const TuningValues&)>;

struct TunerJob {
  const spec::InputSpec* spec = nullptr;
  spec::InputKey input_key;
  std::vector<TuningValues> space;  // every valid point, enumeration order
  std::size_t budget = 1;           // measurement calls allowed
  std::uint64_t seed = 0;
};

struct TunerResult {
  std::optional<TuningValues> best;
  double best_time_ms = 0.0;
  std::size_t proposals = 0;
};

class TunerPlugin {
 public:
  virtual ~TunerPlugin() = default;
  virtual std::string id() const = 0;
  // Error("PluginFailure") when the plugin breaks its contract.
  virtual TunerResult tune(const TunerJob& job, const MeasureFn& measure) = 0;
};

// Walks the space in enumeration order until the budget runs out.
class ExhaustiveTuner : public TunerPlugin {
 public:
  std::string id() const override { return "exhaustive"; }
  TunerResult tune(const TunerJob& job, const MeasureFn& measure) override;
};

// Draws min(budget, |space|) distinct points uniformly.
class RandomSearchTuner : public TunerPlugin {
 public:
  std::string id() const override { return "random-search"; }
  TunerResult tune(const TunerJob& job, const MeasureFn& measure) override;
};

// An executable speaking line-delimited JSON over stdio. It receives
//   {"type":"job","tuning":[{"name":..,"values":[..]}],"budget":N,"seed":S}
// then sends {"type":"measure","tuning":{..}} lines, each answered with
// {"type":"result","time_ms":x} or {"type":"result","invalid":true}, and
// finishes with {"type":"done"}.
class ExternalTuner : public TunerPlugin {
 public:
  ExternalTuner(std::string id, std::vector<std::string> argv,
                std::chrono::milliseconds line_timeout = std::chrono::seconds(60));
  // {"id", "command": [...], "timeout_s"}; relative argv entries resolve
  // against the manifest directory when such a file exists.
  static std::shared_ptr<ExternalTuner> from_manifest(const fs::path& manifest);
  std::string id() const override { return id_; }
  TunerResult tune(const TunerJob& job, const MeasureFn& measure) override;

 private:
  std::string id_;
  std::vector<std::string> argv_;
  std::chrono::milliseconds line_timeout_;
};

class TunerRegistry {
 public:
  // Holds `exhaustive` and `random-search`.
  static TunerRegistry with_builtins();
  // Error("DuplicatePlugin") when the id is taken.
  void register_plugin(std::shared_ptr<TunerPlugin> plugin);
  void load_directory(const fs::path& dir);
  // Error("UnknownPlugin").
  TunerPlugin& get(const std::string& id) const;
  std::vector<std::string> ids() const;

 private:
  std::vector<std::shared_ptr<TunerPlugin>> plugins_;
};

// ---- evaluation ----

struct FlopsModel {
  std::string expression = "2 * n * n * n";
  // Error("InvalidFlopsModel") unless the expression evaluates positive.
  std::int64_t flops(const spec::InputKey& key) const;
};

struct Strategy {
  enum class Kind { exhaustive, random, tuner };
  Kind kind = Kind::exhaustive;
  std::size_t budget = 0;  // random: sample size; tuner: iteration budget
  std::uint64_t seed = 0;
  std::string plugin;  // tuner id
  int repeats = 1;     // tuner only

  static Strategy exhaustive() { return {}; }
  static Strategy random(std::size_t budget, std::uint64_t seed) { return {Kind::random, budget, seed, {}, 1}; }
  static Strategy tuner(std::string id, std::size_t budget, int repeats, std::uint64_t seed = 0) {
    return {Kind::tuner, budget, seed, std::move(id), repeats};
  }
  std::string describe() const;
};

struct PerfQuery {
  spec::InputKey input_key;
  Strategy strategy;
  backend::TimingPolicy policy;
  std::size_t keep_top = 128;
  int confirm_best = 0;  // extra measurements of the winner
  int parallel_compile = 1;
  std::optional<FlopsModel> flops;
};

struct RankedPoint {
  TuningValues tuning;
  double mean_time_ms = 0.0;
  std::size_t enum_index = 0;  // position in the key's enumeration
  std::string status = "ok";   // ok | invalid_config | compile_error | runtime_error | timeout
};

struct Distribution {
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
  int repeats = 0;
  int failed = 0;
};

struct PerfReport {
  std::string ctx_digest;
  spec::InputKey input_key;
  std::string strategy;
  std::size_t attempted = 0;
  std::size_t evaluated = 0;  // points with a valid time
  std::size_t pruned_invalid = 0;
  std::size_t failed = 0;  // compile, runtime or timeout failures
  RankedPoint best;
  std::vector<RankedPoint> top_k;   // ascending time, ties by enumeration order
  std::vector<RankedPoint> points;  // every attempted point, enumeration order
  std::optional<std::string> flops_expression;
  std::optional<std::int64_t> flops_per_run;
  std::optional<double> best_gflops;
  std::optional<Distribution> distribution;
  std::vector<double> confirm_times_ms;
};

nlohmann::json to_json(const PerfReport& report);
PerfReport report_from_json(const nlohmann::json& j);
// One row per point: tuning values..., status, mean_ms.
std::string to_csv(const PerfReport& report);

// The valid points of `key` in enumeration order.
std::vector<spec::ExecutionParams> key_space(const spec::InputSpec& spec, const spec::InputKey& key);
// Parses "n=64,m=3" against the spec's scalars; the array sizes follow from
// them. With an empty selector the last input key is used.
spec::InputKey select_input_key(const spec::InputSpec& spec, const std::string& selector);

// Error("NoValidConfiguration") when no point produced a time,
// Error("UnknownInputKey") when the key has no valid points.
PerfReport evaluate(const context::KernelContext& ctx, const PerfQuery& query, Measurer& measurer,
                    const TunerRegistry* tuners = nullptr);
PerfReport evaluate(const context::KernelContext& ctx, const PerfQuery& query, backend::Runtime& runtime,
                    const TunerRegistry* tuners = nullptr);

// b.best / a.best. Error("IncomparableReports") when the input keys or flops
// models differ.
double speedup(const PerfReport& a, const PerfReport& b);
// Reference (e.g. vendor library) time over the report's best, in percent.
double percent_of(const PerfReport& report, double reference_time_ms);

struct SweepRow {
  std::size_t budget = 0;
  Distribution best_time_ms;
};

// Runs the tuner `repeats` times per budget with seeds 0..repeats-1. Each
// point is measured once per sweep and reused across repeats. A repeat that
// fails with PluginFailure is excluded and counted.
std::vector<SweepRow> tuner_sweep(const context::KernelContext& ctx, const spec::InputKey& key, TunerPlugin& plugin,
                                  const std::vector<std::size_t>& budgets, int repeats, Measurer& measurer);

}  // namespace peak::perf
