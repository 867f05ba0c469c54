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
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "peak/backend/backend.hpp"
#include "peak/perf/perf.hpp"
#include "peak/store/store.hpp"
#include "peak/transform/transform.hpp"
#include "peak/validation/validation.hpp"

namespace peak::service {

namespace fs = std::filesystem;

struct SessionConfig {
  fs::path workflow_root = "peak-workflow";
  std::string backend = "cpu-ref";
  fs::path data_dir;  // empty: util::data_dir()
  // Exactly one of the two is set after load().
  std::optional<fs::path> mock_dir;
  std::optional<transform::LiveClientConfig> live;
  std::size_t validator_budget = 16;
  std::uint64_t validation_seed = 0;
  std::size_t reference_budget = 16;
  int max_retries = 3;
  backend::TimingPolicy policy;
  std::map<spec::DType, validation::TolerancePolicy> tolerances;
  std::size_t keep_top = 128;
  int parallel_compile = 1;
  std::optional<std::string> flops;  // FlopsModel expression
  fs::path validator_plugins;        // optional directories of manifests
  fs::path tuner_plugins;

  fs::path effective_data_dir() const;
  fs::path catalog_dir() const { return effective_data_dir() / "transformations"; }

  // Relative paths resolve against `base_dir`. Without an "llm" section the
  // mock fixtures under the data directory are used. PEAK_LLM_TOKEN
  // overrides the live token. Error("ConfigError") on invalid input.
  static SessionConfig from_json(const nlohmann::json& j, const fs::path& base_dir);
  static SessionConfig load(const fs::path& file);
  void check() const;
};

struct TransformResult {
  transform::ApplyOutcome outcome;
  std::optional<store::Checkpoint> checkpoint;  // set on success
  fs::path log_file;
};

nlohmann::json to_json(const TransformResult& r);

struct EvaluateRequest {
  perf::Strategy strategy;
  std::string input_key;  // selector such as "n=64"; empty picks the last key
  std::optional<std::size_t> keep_top;
  std::optional<std::string> flops;
  int confirm_best = 0;
};

// Error("InvalidQuery") on unknown strategies or malformed fields.
EvaluateRequest evaluate_request_from_json(const nlohmann::json& j);

struct SequenceStep {
  std::string transformation;
  transform::ApplyStatus status = transform::ApplyStatus::success;
  std::optional<std::string> checkpoint;
};

struct SequenceResult {
  std::string start;
  std::vector<SequenceStep> steps;
  bool completed = false;
  std::string tip;
};

nlohmann::json to_json(const SequenceResult& r);

// One lineage line per entry of a transformation sequence file; blank lines
// and `#` comments are skipped.
std::vector<std::string> parse_sequence(std::string_view text);

// Kernel name of the first `__global__ void name(` in device code.
// Error("MissingKernelName") when there is none.
std::string infer_kernel_name(std::string_view device);

// Lineage forest, one checkpoint per line, children indented under parents.
std::string render_log(const store::Store& s);

// Catalog entries as JSON objects (name, description, calls, backend support).
nlohmann::json catalog_json(const fs::path& catalog_dir, const std::string& backend);

struct InitRequest {
  std::string spec_text;
  std::string device;
  std::string host;
  std::string macros;
  std::string kernel_name;  // empty: inferred from the device code
  std::string label;
};

// The writer side of a workflow root. Holds the root's lock while alive.
class Session {
 public:
  explicit Session(SessionConfig config);
  ~Session();

  const SessionConfig& config() const noexcept { return config_; }
  store::Store& store() noexcept { return store_; }
  const store::Store& store() const noexcept { return store_; }

  // Commits the seed and captures its reference outputs.
  store::Checkpoint init(const InitRequest& request);
  // Apply, validate and commit on success. The attempt log is written to
  // <root>/logs either way. Error("UnknownTransformation").
  TransformResult transform(const std::string& checkpoint, const std::string& name, const std::string& note = {});
  // Evaluates and attaches the report to the checkpoint.
  perf::PerfReport evaluate(const std::string& checkpoint, const EvaluateRequest& request);
  validation::ValidationReport validate(const std::string& checkpoint, std::optional<std::size_t> budget = {});
  transform::ReliabilityReport reliability(const std::string& checkpoint, const std::string& name, int trials);
  // Applies the names in order, stopping at the first failure. Without
  // `from`, starts at the most recently committed seed. With `evaluate`,
  // the start and every new checkpoint get a performance report.
  SequenceResult run_sequence(const std::vector<std::string>& names, const std::optional<std::string>& from,
                              const std::optional<EvaluateRequest>& evaluate);

  transform::NaturalTransformation transformation(const std::string& name) const;

 private:
  backend::Runtime& runtime();
  transform::LlmClient& client();
  const validation::PluginRegistry& plugins();
  const perf::TunerRegistry& tuners();
  transform::ApplyOptions apply_options(const validation::ReferenceStore& refs);

  SessionConfig config_;
  store::Store store_;
  std::unique_ptr<backend::Runtime> runtime_;
  std::unique_ptr<transform::LlmClient> client_;
  std::unique_ptr<validation::PluginRegistry> plugins_;
  std::unique_ptr<perf::TunerRegistry> tuners_;
};

}  // namespace peak::service
