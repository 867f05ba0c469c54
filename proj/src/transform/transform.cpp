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

#include "peak/transform/transform.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "peak/error.hpp"
#include "peak/spec/parser.hpp"
#include "peak/spec/printer.hpp"
#include "peak/util/fs.hpp"
#include "peak/util/hash.hpp"
#include "peak/util/text.hpp"

namespace peak::transform {

namespace {

using nlohmann::json;

constexpr std::size_t kFeedbackLimit = 4000;

const std::set<std::string, std::less<>> kPromptPlaceholders = {"device_code", "host_code", "macros",
                                                                 "spec",        "backend",   "feedback"};

[[noreturn]] void manifest_error(const fs::path& where, const std::string& what) {
  throw Error("ManifestError", fmt::format("{}: {}", where.string(), what));
}

std::string short_hash(std::string_view text) { return util::sha256_hex(text).substr(0, 12); }

std::map<RegionKind, std::string> region_digests(const KernelContext& ctx) {
  std::map<RegionKind, std::string> out;
  for (auto kind : context::kAllRegions) out[kind] = short_hash(ctx.region(kind));
  return out;
}

std::vector<std::string> prompt_inserts(const std::string& tmpl, const fs::path& where) {
  std::vector<std::string> inserts;
  for (const auto& name : util::list_placeholders(tmpl)) {
    if (name.rfind("insert:", 0) == 0) {
      inserts.push_back(name.substr(7));
    } else if (!kPromptPlaceholders.count(name)) {
      throw Error("BadPlaceholder", fmt::format("{}: unknown placeholder '{{{{{}}}}}'", where.string(), name));
    }
  }
  return inserts;
}

}  // namespace

spec::TuningDecl NewTuning::declaration(const std::string& backend) const {
  auto it = values.find(backend);
  if (it == values.end()) it = values.find("default");
  if (it == values.end()) {
    throw Error("ManifestError", fmt::format("new tuning '{}' has no values for backend '{}'", name, backend));
  }
  return spec::TuningDecl{name, spec::parse_value_set(it->second), {}};
}

int NaturalTransformation::call_count() const {
  int n = 0;
  for (const auto& p : passes) n += static_cast<int>(p.calls.size());
  return n;
}

bool NaturalTransformation::supports(const std::string& backend) const {
  return backend_only.empty() || std::find(backend_only.begin(), backend_only.end(), backend) != backend_only.end();
}

Snippet load_snippet(const fs::path& snippets_dir, const std::string& id) {
  const auto path = snippets_dir / (id + ".src");
  if (!util::is_identifier(id) || !fs::is_regular_file(path)) {
    throw Error("MissingSnippet", fmt::format("snippet '{}' not found in {}", id, snippets_dir.string()));
  }
  auto text = util::normalize_newlines(util::read_file(path));
  // First line: "// peak-snippet region=<region>"
  const auto eol = text.find('\n');
  const std::string header(util::trim(std::string_view(text).substr(0, eol)));
  constexpr std::string_view kTag = "// peak-snippet region=";
  if (header.rfind(kTag, 0) != 0) manifest_error(path, "missing '// peak-snippet region=...' header");
  Snippet s;
  s.id = id;
  s.region = context::parse_region(header.substr(kTag.size()));
  s.text = eol == std::string::npos ? std::string() : text.substr(eol + 1);
  if (s.text.find("{{") != std::string::npos) manifest_error(path, "snippet text may not contain '{{'");
  return s;
}

NaturalTransformation load_transformation(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::is_regular_file(manifest_path)) manifest_error(manifest_path, "not found");
  json j;
  try {
    j = json::parse(util::read_file(manifest_path));
  } catch (const json::exception& e) {
    manifest_error(manifest_path, e.what());
  }

  NaturalTransformation t;
  try {
    t.name = j.at("name").get<std::string>();
    t.description = j.value("description", "");
    t.backend_only = j.value("backend_only", std::vector<std::string>{});
    for (const auto& nt : j.value("new_tuning", json::array())) {
      NewTuning decl;
      decl.name = nt.at("name").get<std::string>();
      const auto& v = nt.at("values");
      if (v.is_string()) {
        decl.values["default"] = v.get<std::string>();
      } else {
        decl.values = v.get<std::map<std::string, std::string>>();
      }
      t.new_tuning.push_back(std::move(decl));
    }
    const auto& passes = j.at("passes");
    for (std::size_t k = 0; k < passes.size(); ++k) {
      TransformPass pass;
      pass.index = static_cast<int>(k);
      pass.intermediate_ok = passes[k].value("intermediate_ok", false);
      const auto& calls = passes[k].at("calls");
      for (const auto& c : calls) {
        RegionCall call;
        call.region = context::parse_region(c.at("region").get<std::string>());
        pass.calls.push_back(std::move(call));
      }
      t.passes.push_back(std::move(pass));
    }
  } catch (const json::exception& e) {
    manifest_error(manifest_path, e.what());
  } catch (const Error& e) {
    manifest_error(manifest_path, e.what());
  }

  if (t.name != dir.filename().string()) manifest_error(manifest_path, "name must match the directory name");
  if (t.passes.empty()) manifest_error(manifest_path, "at least one pass is required");

  std::set<std::string> seen;
  for (const auto& nt : t.new_tuning) {
    if (!seen.insert(nt.name).second) manifest_error(manifest_path, "duplicate new tuning '" + nt.name + "'");
    if (nt.values.empty()) manifest_error(manifest_path, "new tuning '" + nt.name + "' has no values");
    for (const auto& [backend, text] : nt.values) {
      try {
        spec::parse_value_set(text);
      } catch (const Error& e) {
        manifest_error(manifest_path, fmt::format("new tuning '{}' ({}): {}", nt.name, backend, e.what()));
      }
    }
  }

  const auto snippets_dir = dir.parent_path() / "snippets";
  for (auto& pass : t.passes) {
    if (pass.calls.empty() || pass.calls.size() > 3) {
      manifest_error(manifest_path, fmt::format("pass {} must have 1 to 3 calls", pass.index));
    }
    std::set<RegionKind> regions;
    for (auto& call : pass.calls) {
      if (!regions.insert(call.region).second) {
        manifest_error(manifest_path, fmt::format("pass {} rewrites a region twice", pass.index));
      }
      const auto file = pass.calls.size() == 1
                            ? dir / fmt::format("pass{}.prompt", pass.index)
                            : dir / fmt::format("pass{}.{}.prompt", pass.index, context::to_string(call.region));
      if (!fs::is_regular_file(file)) manifest_error(file, "prompt template not found");
      call.prompt_template = util::normalize_newlines(util::read_file(file));
      call.inserts = prompt_inserts(call.prompt_template, file);
      for (const auto& id : call.inserts) {
        if (!t.snippets.count(id)) t.snippets.emplace(id, load_snippet(snippets_dir, id));
        if (t.snippets.at(id).region != call.region) {
          manifest_error(file, fmt::format("snippet '{}' belongs to the {} region", id,
                                           context::to_string(t.snippets.at(id).region)));
        }
      }
    }
  }
  return t;
}

std::vector<std::string> list_transformations(const fs::path& catalog_dir) {
  std::vector<std::string> names;
  if (!fs::is_directory(catalog_dir)) return names;
  for (const auto& entry : fs::directory_iterator(catalog_dir)) {
    if (entry.is_directory() && fs::is_regular_file(entry.path() / "manifest.json")) {
      names.push_back(entry.path().filename().string());
    }
  }
  std::sort(names.begin(), names.end());
  return names;
}

// ---- Prompting ----

LlmRequest assemble_prompt(const RegionCall& call, const KernelContext& ctx, const std::string& feedback,
                           const std::map<std::string, Snippet>& snippets, const std::string& model_tag) {
  LlmRequest req;
  req.model_tag = model_tag;
  req.system = fmt::format(
      "You rewrite one region of a GPU kernel written for the {0} backend. The kernel is split into a macros "
      "region, a device region and a host region, concatenated in that order before compilation. Reply with "
      "the complete new text of the {1} region in one fenced code block; any text outside the block is "
      "ignored. Keep every @TUNE(NAME) token exactly as written: each one is replaced by an integer tuning "
      "value at compile time.",
      ctx.backend, context::to_string(call.region));
  req.user = util::render_template(call.prompt_template, [&](std::string_view name) -> std::optional<std::string> {
    if (name == "device_code") return ctx.device;
    if (name == "host_code") return ctx.host;
    if (name == "macros") return ctx.macros.empty() ? std::string("(empty)\n") : ctx.macros;
    if (name == "spec") return spec::print_spec(ctx.spec);
    if (name == "backend") return ctx.backend;
    if (name == "feedback") {
      if (feedback.empty()) return std::string();
      return "The previous attempt was rejected:\n" + util::truncate(feedback, kFeedbackLimit) + "\n";
    }
    if (name.rfind("insert:", 0) == 0) {
      auto it = snippets.find(std::string(name.substr(7)));
      if (it != snippets.end()) return it->second.text;
    }
    return std::nullopt;
  });
  req.key.region = call.region;
  req.key.region_hash = short_hash(ctx.region(call.region));
  return req;
}

std::string extract_region_code(const LlmResponse& response) {
  const auto lines = util::split_lines(util::normalize_newlines(response.raw_text));
  std::optional<std::string> last;
  std::optional<std::string> open;
  std::string fence;
  for (const auto& line : lines) {
    const auto t = util::trim(line);
    if (!open) {
      if (t.rfind("```", 0) == 0 || t.rfind("~~~", 0) == 0) {
        fence = std::string(t.substr(0, 3));
        open.emplace();
      }
      continue;
    }
    if (t.size() >= 3 && t.substr(0, 3) == fence && t.find_first_not_of(fence[0]) == std::string_view::npos) {
      last = std::move(*open);
      open.reset();
      continue;
    }
    open->append(line);
    open->push_back('\n');
  }
  if (!last) throw Error("ExtractionFailure", "response contains no complete fenced code block");
  return *last;
}

// ---- Mock clients ----

MockClient::MockClient(fs::path root) : root_(std::move(root)) {}

std::vector<std::string> MockClient::candidates(const CallKey& k) const {
  const auto base = fmt::format("p{}c{}", k.pass, k.call);
  return {fmt::format("{}.a{}.{}.md", base, k.attempt, k.region_hash), fmt::format("{}.{}.md", base, k.region_hash),
          fmt::format("{}.a{}.md", base, k.attempt), base + ".md"};
}

LlmResponse MockClient::complete(const LlmRequest& request) {
  const auto dir = root_ / request.key.transformation;
  for (const auto& name : candidates(request.key)) {
    if (fs::is_regular_file(dir / name)) return {util::read_file(dir / name)};
  }
  return {fmt::format("No recorded answer for {} pass {} call {}; nothing to propose.", request.key.transformation,
                      request.key.pass, request.key.call)};
}

ScriptedMockClient::ScriptedMockClient(fs::path root, std::map<int, std::string> schedule)
    : MockClient(std::move(root)), schedule_(std::move(schedule)) {}

void ScriptedMockClient::begin_trial(int trial) {
  auto it = schedule_.find(trial);
  variant_ = it == schedule_.end() ? std::string() : it->second;
}

std::vector<std::string> ScriptedMockClient::candidates(const CallKey& key) const {
  auto names = MockClient::candidates(key);
  if (!variant_.empty()) names.insert(names.begin(), fmt::format("p{}c{}.{}.md", key.pass, key.call, variant_));
  return names;
}

// ---- Application ----

std::string_view to_string(ApplyStatus s) noexcept {
  switch (s) {
    case ApplyStatus::success: return "success";
    case ApplyStatus::compile_failure: return "compile_failure";
    case ApplyStatus::reference_failure: return "reference_failure";
    case ApplyStatus::extraction_failure: return "extraction_failure";
    case ApplyStatus::exhausted_retries: return "exhausted_retries";
  }
  return "?";
}

std::vector<CallRecord> ApplyOutcome::isolation_violations() const {
  std::vector<CallRecord> bad;
  for (const auto& c : calls) {
    for (auto kind : context::kAllRegions) {
      if (kind != c.region && c.before.at(kind) != c.after.at(kind)) {
        bad.push_back(c);
        break;
      }
    }
  }
  return bad;
}

namespace {

struct PassAttempt {
  std::optional<KernelContext> ctx;
  ApplyStatus status = ApplyStatus::success;
  std::string message;
  std::optional<validation::ValidationReport> report;
};

PassAttempt run_pass(const KernelContext& start, const NaturalTransformation& t, const TransformPass& pass,
                     int attempt, const std::string& feedback, LlmClient& client, const ApplyOptions& options,
                     std::vector<std::string>& registered, std::vector<CallRecord>& call_log) {
  PassAttempt out;
  KernelContext cand = start;
  for (std::size_t c = 0; c < pass.calls.size(); ++c) {
    const auto& call = pass.calls[c];
    auto req = assemble_prompt(call, cand, feedback, t.snippets, client.model_tag());
    req.key.transformation = t.name;
    req.key.pass = pass.index;
    req.key.call = static_cast<int>(c);
    req.key.attempt = attempt;

    std::string code;
    try {
      code = extract_region_code(client.complete(req));
    } catch (const Error& e) {
      if (e.code() == "ExtractionFailure" || e.code() == "LlmError") {
        out.status = ApplyStatus::extraction_failure;
        out.message = e.what();
        return out;
      }
      throw;
    }

    KernelContext with_decls = cand;
    std::vector<std::string> added;
    for (const auto& name : context::placeholders(code)) {
      if (with_decls.spec.find_tuning(name)) continue;
      auto it = std::find_if(t.new_tuning.begin(), t.new_tuning.end(), [&](const auto& n) { return n.name == name; });
      if (it == t.new_tuning.end()) continue;
      with_decls.spec.tuning.push_back(it->declaration(cand.backend));
      added.push_back(name);
    }
    try {
      auto next = context::replace_region(with_decls, call.region, code);
      CallRecord rec{pass.index, static_cast<int>(c), call.region, region_digests(cand), region_digests(next)};
      call_log.push_back(std::move(rec));
      cand = std::move(next);
      registered.insert(registered.end(), added.begin(), added.end());
    } catch (const Error& e) {
      out.status = ApplyStatus::compile_failure;
      out.message = fmt::format("{} region rejected: {}", context::to_string(call.region), e.what());
      return out;
    }
  }

  const bool last = pass.index + 1 == static_cast<int>(t.passes.size());
  if (last || !pass.intermediate_ok) {
    validation::ValidationReport report;
    try {
      report = validation::validate(cand, *options.refs, *options.runtime, options.validate, options.plugins);
    } catch (const Error& e) {
      if (e.code() == "ToolchainMissing" || e.code() == "ManifestError") throw;
      out.status = ApplyStatus::reference_failure;
      out.message = e.what();
      return out;
    }
    if (!report.pass) {
      out.status = report.has_status("compile_error") ? ApplyStatus::compile_failure : ApplyStatus::reference_failure;
      out.message = report.feedback();
      out.report = std::move(report);
      return out;
    }
    out.report = std::move(report);
  }
  out.ctx = std::move(cand);
  return out;
}

}  // namespace

ApplyOutcome apply_transformation(const KernelContext& ctx, const NaturalTransformation& t, LlmClient& client,
                                  const ApplyOptions& options) {
  if (!options.runtime || !options.refs) throw Error("InvalidOptions", "a runtime and a reference store are required");
  if (options.max_retries < 0) throw Error("InvalidOptions", "max_retries must be >= 0");
  if (!t.supports(ctx.backend)) {
    throw Error("UnsupportedBackend",
                fmt::format("transformation '{}' does not support backend '{}'", t.name, ctx.backend));
  }
  for (const auto& nt : t.new_tuning) {
    if (ctx.spec.find_tuning(nt.name)) {
      throw Error("TuningConflict", fmt::format("tuning parameter '{}' already exists in the context", nt.name));
    }
  }

  ApplyOutcome outcome;
  KernelContext current = ctx;
  for (const auto& pass : t.passes) {
    std::string feedback;
    bool done = false;
    PassAttempt last;
    for (int attempt = 1; attempt <= options.max_retries + 1; ++attempt) {
      std::vector<std::string> registered = outcome.registered_tuning;
      last = run_pass(current, t, pass, attempt, feedback, client, options, registered, outcome.calls);
      outcome.attempts.push_back({pass.index, attempt, last.status, util::truncate(last.message, kFeedbackLimit)});
      if (last.report) outcome.validation = last.report;
      if (last.ctx) {
        current = std::move(*last.ctx);
        outcome.registered_tuning = std::move(registered);
        done = true;
        break;
      }
      feedback = last.message;
    }
    if (!done) {
      outcome.status = options.max_retries > 0 ? ApplyStatus::exhausted_retries : last.status;
      return outcome;
    }
  }
  outcome.status = ApplyStatus::success;
  outcome.result_ctx = std::move(current);
  return outcome;
}

json to_json(const ApplyOutcome& o) {
  json j;
  j["status"] = std::string(to_string(o.status));
  j["attempts"] = json::array();
  for (const auto& a : o.attempts) {
    j["attempts"].push_back(
        {{"pass", a.pass}, {"attempt", a.attempt}, {"status", to_string(a.status)}, {"stderr_excerpt", a.stderr_excerpt}});
  }
  j["calls"] = json::array();
  for (const auto& c : o.calls) {
    json before, after;
    for (const auto& [k, v] : c.before) before[std::string(context::to_string(k))] = v;
    for (const auto& [k, v] : c.after) after[std::string(context::to_string(k))] = v;
    j["calls"].push_back({{"pass", c.pass},
                          {"call", c.call},
                          {"region", context::to_string(c.region)},
                          {"before", before},
                          {"after", after}});
  }
  j["registered_tuning"] = o.registered_tuning;
  if (o.validation) j["validation"] = validation::to_json(*o.validation);
  if (o.result_ctx) j["result_digest"] = context::digest(*o.result_ctx).hash;
  return j;
}

json to_json(const ReliabilityReport& r) {
  json j{{"trials", r.trials},
         {"success_rate", r.success_rate},
         {"compile_failure_rate", r.compile_failure_rate},
         {"reference_failure_rate", r.reference_failure_rate},
         {"extraction_failure_rate", r.extraction_failure_rate}};
  j["per_trial"] = json::array();
  for (const auto& o : r.per_trial) j["per_trial"].push_back(to_json(o));
  return j;
}

ReliabilityReport measure_reliability(const KernelContext& ctx, const NaturalTransformation& t, LlmClient& client,
                                      int trials, ApplyOptions options, const fs::path& audit_dir) {
  if (trials <= 0) throw Error("InvalidOptions", "trials must be positive");
  options.max_retries = 0;
  ReliabilityReport report;
  report.trials = trials;
  int ok = 0, compile = 0, reference = 0, extraction = 0;
  for (int i = 1; i <= trials; ++i) {
    client.begin_trial(i);
    auto outcome = apply_transformation(ctx, t, client, options);
    switch (outcome.status) {
      case ApplyStatus::success: ++ok; break;
      case ApplyStatus::compile_failure: ++compile; break;
      case ApplyStatus::reference_failure: ++reference; break;
      case ApplyStatus::extraction_failure: ++extraction; break;
      case ApplyStatus::exhausted_retries: break;
    }
    if (!audit_dir.empty()) {
      auto j = to_json(outcome);
      j["trial"] = i;
      j["transformation"] = t.name;
      j["model"] = client.model_tag();
      util::write_file_atomic(audit_dir / fmt::format("trial-{:04d}.json", i), j.dump(2));
    }
    report.per_trial.push_back(std::move(outcome));
  }
  const double n = trials;
  report.success_rate = ok / n;
  report.compile_failure_rate = compile / n;
  report.reference_failure_rate = reference / n;
  report.extraction_failure_rate = extraction / n;
  return report;
}

}  // namespace peak::transform
