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

#include "peak/service/session.hpp"

#include <chrono>
#include <cstdlib>
#include <regex>

#include <fmt/chrono.h>
#include <fmt/core.h>

#include "peak/error.hpp"
#include "peak/spec/parser.hpp"
#include "peak/util/data_dir.hpp"
#include "peak/util/fs.hpp"
#include "peak/util/text.hpp"

namespace peak::service {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& message) { throw Error("ConfigError", message); }

fs::path resolve_path(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string stamp() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  return fmt::format("{:%Y%m%dT%H%M%S}{:03d}", fmt::gmtime(std::chrono::system_clock::to_time_t(now)), ms);
}

template <typename T>
T field(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    config_error(fmt::format("field '{}' has the wrong type", key));
  }
}

}  // namespace

fs::path SessionConfig::effective_data_dir() const { return data_dir.empty() ? util::data_dir() : data_dir; }

SessionConfig SessionConfig::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) config_error("configuration must be a JSON object");
  SessionConfig c;
  if (j.contains("workflow_root")) c.workflow_root = resolve_path(base_dir, field<std::string>(j, "workflow_root", {}));
  c.backend = field<std::string>(j, "backend", c.backend);
  if (j.contains("data_dir")) c.data_dir = resolve_path(base_dir, field<std::string>(j, "data_dir", {}));
  c.validator_budget = field<std::size_t>(j, "validator_budget", c.validator_budget);
  c.validation_seed = field<std::uint64_t>(j, "validation_seed", c.validation_seed);
  c.reference_budget = field<std::size_t>(j, "reference_budget", c.reference_budget);
  c.max_retries = field<int>(j, "max_retries", c.max_retries);
  c.keep_top = field<std::size_t>(j, "keep_top", c.keep_top);
  c.parallel_compile = field<int>(j, "parallel_compile", c.parallel_compile);
  if (j.contains("flops") && !j.at("flops").is_null()) c.flops = field<std::string>(j, "flops", {});
  if (j.contains("validator_plugins")) {
    c.validator_plugins = resolve_path(base_dir, field<std::string>(j, "validator_plugins", {}));
  }
  if (j.contains("tuner_plugins")) c.tuner_plugins = resolve_path(base_dir, field<std::string>(j, "tuner_plugins", {}));
  if (j.contains("timing")) {
    const auto& t = j.at("timing");
    c.policy.warmup_runs = field<int>(t, "warmup_runs", c.policy.warmup_runs);
    c.policy.measured_runs = field<int>(t, "measured_runs", c.policy.measured_runs);
  }
  if (j.contains("tolerances")) {
    for (const auto& [name, tol] : j.at("tolerances").items()) {
      const auto dtype = spec::parse_dtype(name);
      if (!dtype) config_error(fmt::format("unknown dtype '{}' in tolerances", name));
      auto p = validation::default_tolerance(*dtype);
      p.abs_tol = field<double>(tol, "abs", p.abs_tol);
      p.rel_tol = field<double>(tol, "rel", p.rel_tol);
      c.tolerances[*dtype] = p;
    }
  }
  if (j.contains("llm")) {
    const auto& llm = j.at("llm");
    if (llm.contains("mock") == llm.contains("live")) config_error("llm needs exactly one of 'mock' or 'live'");
    if (llm.contains("mock")) {
      c.mock_dir = resolve_path(base_dir, field<std::string>(llm, "mock", {}));
    } else {
      const auto& live = llm.at("live");
      transform::LiveClientConfig lc;
      lc.base_url = field<std::string>(live, "base_url", {});
      lc.model = field<std::string>(live, "model", {});
      lc.token = field<std::string>(live, "token", {});
      lc.inflight = field<int>(live, "inflight", lc.inflight);
      lc.timeout = std::chrono::seconds(field<int>(live, "timeout_s", static_cast<int>(lc.timeout.count())));
      if (live.contains("audit_dir")) lc.audit_dir = resolve_path(base_dir, field<std::string>(live, "audit_dir", {}));
      c.live = lc;
    }
  }
  if (c.live) {
    if (const char* token = std::getenv("PEAK_LLM_TOKEN")) c.live->token = token;
  } else if (!c.mock_dir) {
    c.mock_dir = c.effective_data_dir() / "mock";
  }
  c.check();
  return c;
}

SessionConfig SessionConfig::load(const fs::path& file) {
  json j;
  try {
    j = json::parse(util::read_file(file));
  } catch (const json::exception& e) {
    config_error(fmt::format("'{}': {}", file.string(), e.what()));
  } catch (const Error& e) {
    config_error(e.what());
  }
  return from_json(j, fs::absolute(file).parent_path());
}

void SessionConfig::check() const {
  if (mock_dir.has_value() == live.has_value()) config_error("exactly one of the mock or live LLM client is required");
  if (live && (live->base_url.empty() || live->model.empty())) config_error("live LLM client needs base_url and model");
  if (validator_budget == 0 || reference_budget == 0) config_error("budgets must be positive");
  if (max_retries < 0) config_error("max_retries must not be negative");
  if (keep_top == 0) config_error("keep_top must be positive");
  if (parallel_compile < 1) config_error("parallel_compile must be at least 1");
  if (policy.warmup_runs < 0 || policy.measured_runs < 1) config_error("invalid timing policy");
  if (workflow_root.empty()) config_error("workflow_root is required");
}

json to_json(const TransformResult& r) {
  json j = transform::to_json(r.outcome);
  j["checkpoint"] = r.checkpoint ? json(r.checkpoint->id) : json(nullptr);
  j["log_file"] = r.log_file.string();
  return j;
}

EvaluateRequest evaluate_request_from_json(const json& j) {
  if (!j.is_object()) throw Error("InvalidQuery", "body must be a JSON object");
  EvaluateRequest r;
  try {
    const auto kind = j.value("strategy", std::string("exhaustive"));
    const auto budget = j.value("budget", std::size_t{0});
    const auto seed = j.value("seed", std::uint64_t{0});
    if (kind == "exhaustive") {
      r.strategy = perf::Strategy::exhaustive();
    } else if (kind == "random") {
      r.strategy = perf::Strategy::random(budget, seed);
    } else if (kind == "tuner") {
      r.strategy = perf::Strategy::tuner(j.at("plugin").get<std::string>(), budget, j.value("repeats", 1), seed);
    } else {
      throw Error("InvalidQuery", fmt::format("unknown strategy '{}'", kind));
    }
    r.input_key = j.value("input_key", std::string());
    if (j.contains("keep_top")) r.keep_top = j.at("keep_top").get<std::size_t>();
    if (j.contains("flops") && !j.at("flops").is_null()) r.flops = j.at("flops").get<std::string>();
    r.confirm_best = j.value("confirm_best", 0);
  } catch (const json::exception& e) {
    throw Error("InvalidQuery", e.what());
  }
  return r;
}

json to_json(const SequenceResult& r) {
  json steps = json::array();
  for (const auto& s : r.steps) {
    steps.push_back({{"transformation", s.transformation},
                     {"status", transform::to_string(s.status)},
                     {"checkpoint", s.checkpoint ? json(*s.checkpoint) : json(nullptr)}});
  }
  return {{"start", r.start}, {"steps", steps}, {"completed", r.completed}, {"tip", r.tip}};
}

std::vector<std::string> parse_sequence(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& line : util::split_lines(text)) {
    const auto t = util::trim(line);
    if (t.empty() || t.front() == '#') continue;
    out.emplace_back(t);
  }
  return out;
}

std::string infer_kernel_name(std::string_view device) {
  static const std::regex kGlobal(R"(__global__\s+void\s+([A-Za-z_][A-Za-z0-9_]*)\s*\()");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(device.begin(), device.end(), m, kGlobal)) {
    throw Error("MissingKernelName", "device code has no __global__ kernel");
  }
  return m[1].str();
}

namespace {

void render_subtree(const store::Store& s, const std::map<std::string, std::vector<store::Checkpoint>>& children,
                    const std::map<std::string, std::vector<std::string>>& names, const store::Checkpoint& c,
                    int depth, std::string& out) {
  std::string line = fmt::format("{}* {} {}", std::string(2 * depth, ' '), c.id.substr(0, 12),
                                 c.transformation_name.value_or("seed"));
  if (c.validation) line += c.validation->pass ? "  validated" : "  rejected";
  if (!c.perf.empty()) line += fmt::format("  best {:.6g} ms", c.perf.back().best.mean_time_ms);
  if (auto it = names.find(c.id); it != names.end()) {
    std::string refs;
    for (const auto& n : it->second) refs += (refs.empty() ? "" : ", ") + n;
    line += "  (" + refs + ")";
  }
  if (!c.note.empty()) line += "  # " + c.note;
  out += line + "\n";
  if (auto it = children.find(c.id); it != children.end()) {
    for (const auto& child : it->second) render_subtree(s, children, names, child, depth + 1, out);
  }
}

}  // namespace

std::string render_log(const store::Store& s) {
  const auto all = s.list();
  std::map<std::string, std::vector<store::Checkpoint>> children;
  for (const auto& c : all) {
    if (c.parent) children[*c.parent].push_back(c);
  }
  std::map<std::string, std::vector<std::string>> names;
  for (const auto& [name, id] : s.refs()) names[id].push_back(name);
  std::string out;
  for (const auto& c : all) {
    if (!c.parent) render_subtree(s, children, names, c, 0, out);
  }
  return out;
}

json catalog_json(const fs::path& catalog_dir, const std::string& backend) {
  json out = json::array();
  for (const auto& name : transform::list_transformations(catalog_dir)) {
    const auto t = transform::load_transformation(catalog_dir / name);
    json tuning = json::array();
    for (const auto& nt : t.new_tuning) {
      auto it = nt.values.find(backend);
      if (it == nt.values.end()) it = nt.values.find("default");
      tuning.push_back({{"name", nt.name}, {"values", it == nt.values.end() ? json(nullptr) : json(it->second)}});
    }
    out.push_back({{"name", t.name},
                   {"description", t.description},
                   {"passes", t.passes.size()},
                   {"calls", t.call_count()},
                   {"backend_only", t.backend_only},
                   {"supported", t.supports(backend)},
                   {"new_tuning", tuning}});
  }
  return out;
}

Session::Session(SessionConfig config)
    : config_(std::move(config)), store_(store::Store::open(config_.workflow_root, store::Store::Mode::write)) {
  config_.check();
}

Session::~Session() = default;

backend::Runtime& Session::runtime() {
  if (!runtime_) {
    runtime_ = std::make_unique<backend::Runtime>(backend::find_backend(config_.backend, config_.effective_data_dir()),
                                                  config_.workflow_root / "cache");
  }
  return *runtime_;
}

transform::LlmClient& Session::client() {
  if (!client_) {
    if (config_.mock_dir) {
      client_ = std::make_unique<transform::MockClient>(*config_.mock_dir);
    } else {
      auto live = *config_.live;
      if (live.audit_dir.empty()) live.audit_dir = config_.workflow_root / "audit" / "llm";
      client_ = std::make_unique<transform::LiveClient>(live);
    }
  }
  return *client_;
}

const validation::PluginRegistry& Session::plugins() {
  if (!plugins_) {
    plugins_ = std::make_unique<validation::PluginRegistry>();
    if (!config_.validator_plugins.empty()) plugins_->load_directory(config_.validator_plugins);
  }
  return *plugins_;
}

const perf::TunerRegistry& Session::tuners() {
  if (!tuners_) {
    tuners_ = std::make_unique<perf::TunerRegistry>(perf::TunerRegistry::with_builtins());
    if (!config_.tuner_plugins.empty()) tuners_->load_directory(config_.tuner_plugins);
  }
  return *tuners_;
}

transform::ApplyOptions Session::apply_options(const validation::ReferenceStore& refs) {
  transform::ApplyOptions o;
  o.runtime = &runtime();
  o.refs = &refs;
  o.plugins = &plugins();
  o.validate.budget = config_.validator_budget;
  o.validate.seed = config_.validation_seed;
  o.validate.policies = config_.tolerances;
  o.validate.parallel_compile = config_.parallel_compile;
  o.max_retries = config_.max_retries;
  return o;
}

transform::NaturalTransformation Session::transformation(const std::string& name) const {
  const auto dir = config_.catalog_dir() / name;
  static const std::regex kName("[a-z0-9][a-z0-9-]*");
  if (!std::regex_match(name, kName) || !fs::is_regular_file(dir / "manifest.json")) {
    throw Error("UnknownTransformation", fmt::format("no transformation '{}' in the catalog", name));
  }
  return transform::load_transformation(dir);
}

store::Checkpoint Session::init(const InitRequest& request) {
  auto spec = spec::parse_spec(request.spec_text);
  const auto kernel = request.kernel_name.empty() ? infer_kernel_name(request.device) : request.kernel_name;
  const auto ctx = context::make_context(request.device, request.host, request.macros, std::move(spec),
                                         config_.backend, kernel, request.label);
  const auto id = context::digest(ctx).hash;
  // References first: a seed that cannot run is never committed.
  auto refs = validation::build_reference(ctx, runtime(), config_.reference_budget, config_.validation_seed,
                                          config_.parallel_compile);
  const auto c = store_.commit(ctx, {});
  refs.seed_digest = id;
  store_.save_references(refs);
  return c;
}

TransformResult Session::transform(const std::string& checkpoint, const std::string& name, const std::string& note) {
  const auto id = store_.resolve(checkpoint);
  const auto t = transformation(name);
  const auto ctx = store_.restore(id);
  const auto refs = store_.references_for(id);
  TransformResult r;
  r.outcome = transform::apply_transformation(ctx, t, client(), apply_options(refs));
  if (r.outcome.status == transform::ApplyStatus::success) {
    store::CommitRequest req;
    req.parent = id;
    req.transformation_name = name;
    req.validation = r.outcome.validation;
    req.note = note;
    r.checkpoint = store_.commit(*r.outcome.result_ctx, req);
  }
  fs::create_directories(config_.workflow_root / "logs");
  r.log_file = config_.workflow_root / "logs" / fmt::format("{}-{}-{}.json", stamp(), name, id.substr(0, 12));
  util::write_file_atomic(r.log_file, to_json(r).dump(2));
  return r;
}

perf::PerfReport Session::evaluate(const std::string& checkpoint, const EvaluateRequest& request) {
  const auto id = store_.resolve(checkpoint);
  const auto ctx = store_.restore(id);
  perf::PerfQuery q;
  q.input_key = perf::select_input_key(ctx.spec, request.input_key);
  q.strategy = request.strategy;
  q.policy = config_.policy;
  q.keep_top = request.keep_top.value_or(config_.keep_top);
  q.confirm_best = request.confirm_best;
  q.parallel_compile = config_.parallel_compile;
  if (const auto& f = request.flops ? request.flops : config_.flops) q.flops = perf::FlopsModel{*f};
  auto report = perf::evaluate(ctx, q, runtime(), &tuners());
  store_.attach_perf(id, report);
  return report;
}

validation::ValidationReport Session::validate(const std::string& checkpoint, std::optional<std::size_t> budget) {
  const auto id = store_.resolve(checkpoint);
  const auto ctx = store_.restore(id);
  const auto refs = store_.references_for(id);
  auto o = apply_options(refs).validate;
  if (budget) o.budget = *budget;
  return validation::validate(ctx, refs, runtime(), o, &plugins());
}

transform::ReliabilityReport Session::reliability(const std::string& checkpoint, const std::string& name,
                                                  int trials) {
  const auto id = store_.resolve(checkpoint);
  const auto t = transformation(name);
  const auto ctx = store_.restore(id);
  const auto refs = store_.references_for(id);
  const auto audit = config_.workflow_root / "audit" / fmt::format("reliability-{}-{}", stamp(), name);
  return transform::measure_reliability(ctx, t, client(), trials, apply_options(refs), audit);
}

SequenceResult Session::run_sequence(const std::vector<std::string>& names, const std::optional<std::string>& from,
                                     const std::optional<EvaluateRequest>& evaluate_request) {
  if (names.empty()) throw Error("InvalidQuery", "the sequence is empty");
  for (const auto& name : names) transformation(name);

  SequenceResult r;
  if (from) {
    r.start = store_.resolve(*from);
  } else {
    for (const auto& c : store_.list()) {
      if (!c.parent) r.start = c.id;
    }
    if (r.start.empty()) throw Error("UnknownCheckpoint", "the store has no seed; run init first");
  }
  r.tip = r.start;

  const auto ensure_perf = [&](const std::string& id) {
    if (!evaluate_request) return;
    const auto ctx = store_.restore(id);
    const auto key = perf::select_input_key(ctx.spec, evaluate_request->input_key);
    if (!store_.get(id).perf_for(key)) evaluate(id, *evaluate_request);
  };

  ensure_perf(r.start);
  for (const auto& name : names) {
    auto result = transform(r.tip, name);
    SequenceStep step{name, result.outcome.status, {}};
    if (!result.checkpoint) {
      r.steps.push_back(step);
      return r;
    }
    step.checkpoint = result.checkpoint->id;
    r.steps.push_back(step);
    r.tip = result.checkpoint->id;
    ensure_perf(r.tip);
  }
  r.completed = true;
  return r;
}

}  // namespace peak::service
