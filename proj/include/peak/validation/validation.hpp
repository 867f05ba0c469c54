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
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <json.hpp>

#include "peak/backend/backend.hpp"
#include "peak/context/context.hpp"
#include "peak/spec/types.hpp"

namespace peak::validation {

namespace fs = std::filesystem;

struct TolerancePolicy {
  double abs_tol = 1e-6;
  double rel_tol = 1e-3;
  spec::DType dtype = spec::DType::f32;
  // Accumulation length; scales rel_tol by max(1, sqrt(k / 64)).
  std::optional<std::int64_t> reduction_dim_hint;

  double effective_rel_tol() const;
};

// f32: 1e-6 / 1e-3, f16: 1e-3 / 1e-2, i32: exact.
TolerancePolicy default_tolerance(spec::DType dtype);

struct CompareResult {
  bool match = true;
  double worst_error = 0.0;  // max |candidate - reference|
  std::optional<std::size_t> first_mismatch_index;
};

// Elementwise |c - r| <= abs_tol + rel_tol * |r|, f16 widened to f32.
// Error("LengthMismatch") when the buffers disagree in element count.
CompareResult compare_buffers(std::string_view candidate, std::string_view reference, const TolerancePolicy& policy);

struct ReferenceEntry {
  spec::InputKey key;
  std::map<std::string, std::string> buffers;
};

// Seed outputs keyed by input key (scalars and array sizes, never tuning).
class ReferenceStore {
 public:
  std::string seed_digest;
  std::map<std::string, ReferenceEntry> entries;  // by InputKey::hash()

  const ReferenceEntry* find(const spec::InputKey& key) const;
  // <dir>/index.json and <dir>/refs/<key-hash>/<array>.bin
  void save(const fs::path& dir) const;
  static ReferenceStore load(const fs::path& dir);
  bool operator==(const ReferenceStore&) const;
};

// One run per sampled input key, tuning fixed to the smallest valid values.
// Error("SeedExecutionFailure") when the spec has no outputs or a run fails.
ReferenceStore build_reference(const context::KernelContext& seed, backend::Runtime& runtime, std::size_t budget,
                               std::uint64_t seed_value, int parallel_compile = 1);

enum class Severity { info, warning, error };
std::string_view to_string(Severity s) noexcept;

struct Finding {
  std::string plugin_id;
  Severity severity = Severity::info;
  std::string message;
};

struct PluginRun {
  std::string params_label;
  fs::path executable;
};

struct PluginInput {
  const context::KernelContext& ctx;
  fs::path bundle_dir;
  std::vector<PluginRun> runs;
};

class ValidatorPlugin {
 public:
  virtual ~ValidatorPlugin() = default;
  virtual std::string id() const = 0;
  // Empty means every backend.
  virtual std::vector<std::string> backends() const { return {}; }
  virtual std::vector<Finding> inspect(const PluginInput& input) = 0;
};

// A plugin implemented by an external command, described by a JSON manifest:
// {"id", "backends": [...], "command": "...", "timeout_s",
//  "findings": [{"severity": "error", "regex": "..."}]}.
// The command may use {{bundle}}, {{executable}}, {{job}} (a JSON file
// listing every sampled run) and {{plugin_dir}}. Each stdout line is matched
// against the regexes; the first capture group (or the line) is the message.
class ExternalValidatorPlugin : public ValidatorPlugin {
 public:
  explicit ExternalValidatorPlugin(const fs::path& manifest);
  std::string id() const override { return id_; }
  std::vector<std::string> backends() const override { return backends_; }
  std::vector<Finding> inspect(const PluginInput& input) override;

 private:
  std::string id_;
  std::vector<std::string> backends_;
  std::string command_;
  fs::path dir_;
  std::chrono::seconds timeout_{60};
  std::vector<std::pair<Severity, std::regex>> patterns_;
};

class PluginRegistry {
 public:
  // Error("DuplicatePlugin") when the id is taken.
  void register_plugin(std::shared_ptr<ValidatorPlugin> plugin);
  // Loads every *.json manifest in `dir`.
  void load_directory(const fs::path& dir);
  std::vector<std::string> ids() const;
  // Runs the plugins that support ctx.backend. A throwing plugin becomes a
  // warning finding.
  std::vector<Finding> run(const PluginInput& input) const;

 private:
  std::vector<std::shared_ptr<ValidatorPlugin>> plugins_;
};

struct SampleRecord {
  std::string params_label;
  std::string input_key;
  // match | mismatch | invalid_config | runtime_error | compile_error | timeout
  std::string status;
  double worst_error = 0.0;
  std::optional<std::size_t> first_mismatch_index;
  std::string mismatch_array;
  std::string detail;
};

struct ValidationReport {
  bool pass = false;
  std::size_t sampled = 0;
  std::vector<SampleRecord> samples;
  std::vector<Finding> findings;
  std::string reason;  // empty when passing

  bool has_status(std::string_view status) const;
  // Actionable summary for the transformation retry loop.
  std::string feedback() const;
};

nlohmann::json to_json(const ValidationReport& report);
ValidationReport report_from_json(const nlohmann::json& j);

struct ValidateOptions {
  std::size_t budget = 16;
  std::uint64_t seed = 0;
  std::map<spec::DType, TolerancePolicy> policies;  // defaults fill the gaps
  std::optional<std::int64_t> reduction_dim_hint;
  int parallel_compile = 1;
};

// Samples `budget` execution parameters among those whose input key has a
// reference entry, runs them with capture and compares every output array.
// Error("IncompatibleReference") when no valid parameter has a reference or
// the output arrays differ from the reference's.
ValidationReport validate(const context::KernelContext& ctx, const ReferenceStore& refs, backend::Runtime& runtime,
                          const ValidateOptions& options, const PluginRegistry* plugins = nullptr);

}  // namespace peak::validation
