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

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "peak/backend/backend.hpp"
#include "peak/context/context.hpp"
#include "peak/validation/validation.hpp"

namespace peak::transform {

namespace fs = std::filesystem;
using context::KernelContext;
using context::RegionKind;

struct Snippet {
  std::string id;
  RegionKind region = RegionKind::device;
  std::string text;
};

// One LLM call of a pass: rewrites exactly one region.
struct RegionCall {
  RegionKind region = RegionKind::device;
  std::string prompt_template;
  std::vector<std::string> inserts;
};

struct TransformPass {
  int index = 0;
  std::vector<RegionCall> calls;  // 1 to 3, run back to back
  bool intermediate_ok = false;   // skip validation after this pass
};

struct NewTuning {
  std::string name;
  std::map<std::string, std::string> values;  // backend id or "default" -> value-set text

  spec::TuningDecl declaration(const std::string& backend) const;
};

struct NaturalTransformation {
  std::string name;
  std::string description;
  std::vector<TransformPass> passes;
  std::vector<NewTuning> new_tuning;
  std::vector<std::string> backend_only;  // empty: any backend
  std::map<std::string, Snippet> snippets;

  int call_count() const;
  bool supports(const std::string& backend) const;
};

// <dir>/manifest.json plus pass<k>.prompt, or pass<k>.<region>.prompt when a
// pass has several calls. Snippets come from <dir>/../snippets/<id>.src.
// Errors: ManifestError, MissingSnippet, BadPlaceholder.
NaturalTransformation load_transformation(const fs::path& dir);
Snippet load_snippet(const fs::path& snippets_dir, const std::string& id);
// Names of the transformation bundles under `catalog_dir`, sorted.
std::vector<std::string> list_transformations(const fs::path& catalog_dir);

struct CallKey {
  std::string transformation;
  int pass = 0;
  int call = 0;
  int attempt = 1;
  RegionKind region = RegionKind::device;
  std::string region_hash;  // first 12 hex of SHA-256 over the input region
};

struct LlmRequest {
  std::string system;
  std::string user;
  std::string model_tag;
  CallKey key;
};

struct LlmResponse {
  std::string raw_text;
};

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual LlmResponse complete(const LlmRequest& request) = 0;
  virtual std::string model_tag() const = 0;
  // Reliability trials are numbered from 1.
  virtual void begin_trial(int /*trial*/) {}
};

// Offline client answering from fixture files under <root>/<transformation>/.
// For pass k, call c and attempt a it returns the first existing file among
//   p{k}c{c}.a{a}.{hash}.md, p{k}c{c}.{hash}.md, p{k}c{c}.a{a}.md, p{k}c{c}.md
// where {hash} is CallKey::region_hash. A missing fixture yields a response
// without a code block.
class MockClient : public LlmClient {
 public:
  explicit MockClient(fs::path root);
  LlmResponse complete(const LlmRequest& request) override;
  std::string model_tag() const override { return "mock"; }

 protected:
  virtual std::vector<std::string> candidates(const CallKey& key) const;
  fs::path root_;
};

// Mock whose trials can be scripted: a trial mapped to a variant (e.g.
// "broken" or "wrong") prefers p{k}c{c}.{variant}.md wherever it exists.
class ScriptedMockClient : public MockClient {
 public:
  ScriptedMockClient(fs::path root, std::map<int, std::string> schedule);
  void begin_trial(int trial) override;

 protected:
  std::vector<std::string> candidates(const CallKey& key) const override;

 private:
  std::map<int, std::string> schedule_;
  std::string variant_;
};

struct LiveClientConfig {
  std::string base_url;  // e.g. https://host/v1
  std::string model;
  std::string token;
  int inflight = 4;
  std::chrono::seconds timeout{300};
  fs::path audit_dir;  // empty: no audit log

  // PEAK_LLM_URL, PEAK_LLM_MODEL, PEAK_LLM_TOKEN, PEAK_LLM_INFLIGHT.
  // Error("ConfigError") when the URL or model is missing.
  static LiveClientConfig from_env();
};

// Chat-completions client. Requests and responses are appended to the audit
// directory with the token redacted.
class LiveClient : public LlmClient {
 public:
  explicit LiveClient(LiveClientConfig config);
  LlmResponse complete(const LlmRequest& request) override;
  std::string model_tag() const override { return config_.model; }

 private:
  LiveClientConfig config_;
};

LlmRequest assemble_prompt(const RegionCall& call, const KernelContext& ctx, const std::string& feedback,
                           const std::map<std::string, Snippet>& snippets, const std::string& model_tag = {});

// Contents of the last fenced block. Error("ExtractionFailure") if none.
std::string extract_region_code(const LlmResponse& response);

enum class ApplyStatus { success, compile_failure, reference_failure, extraction_failure, exhausted_retries };
std::string_view to_string(ApplyStatus s) noexcept;

struct AttemptRecord {
  int pass = 0;
  int attempt = 1;
  ApplyStatus status = ApplyStatus::success;
  std::string stderr_excerpt;
};

// Digests of each region around one region call, for isolation checks.
struct CallRecord {
  int pass = 0;
  int call = 0;
  RegionKind region = RegionKind::device;
  std::map<RegionKind, std::string> before;
  std::map<RegionKind, std::string> after;
};

struct ApplyOutcome {
  ApplyStatus status = ApplyStatus::success;
  std::optional<KernelContext> result_ctx;
  std::optional<validation::ValidationReport> validation;
  std::vector<AttemptRecord> attempts;
  std::vector<CallRecord> calls;
  std::vector<std::string> registered_tuning;

  // Calls whose non-target regions changed (always empty by construction).
  std::vector<CallRecord> isolation_violations() const;
};

nlohmann::json to_json(const ApplyOutcome& outcome);

struct ApplyOptions {
  backend::Runtime* runtime = nullptr;
  const validation::ReferenceStore* refs = nullptr;
  const validation::PluginRegistry* plugins = nullptr;
  validation::ValidateOptions validate;  // budget, seed and tolerances
  int max_retries = 3;
};

// Error("UnsupportedBackend") for a backend_only mismatch and
// Error("TuningConflict") when a new tuning name already exists.
ApplyOutcome apply_transformation(const KernelContext& ctx, const NaturalTransformation& t, LlmClient& client,
                                  const ApplyOptions& options);

struct ReliabilityReport {
  int trials = 0;
  double success_rate = 0.0;
  double compile_failure_rate = 0.0;
  double reference_failure_rate = 0.0;
  double extraction_failure_rate = 0.0;
  std::vector<ApplyOutcome> per_trial;
};

nlohmann::json to_json(const ReliabilityReport& report);

// Runs `trials` applications without retries. Records go to `audit_dir`
// (one JSON file per trial) when it is set.
ReliabilityReport measure_reliability(const KernelContext& ctx, const NaturalTransformation& t, LlmClient& client,
                                      int trials, ApplyOptions options, const fs::path& audit_dir = {});

}  // namespace peak::transform
