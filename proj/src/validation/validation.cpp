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

#include "peak/validation/validation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include <fmt/core.h>

#include "peak/error.hpp"
#include "peak/spec/enumerate.hpp"
#include "peak/util/fs.hpp"
#include "peak/util/half.hpp"
#include "peak/util/subprocess.hpp"
#include "peak/util/text.hpp"

namespace peak::validation {

namespace {

using nlohmann::json;

template <typename T>
T load_elem(std::string_view buf, std::size_t i) {
  T v;
  std::memcpy(&v, buf.data() + i * sizeof(T), sizeof(T));
  return v;
}

double element(std::string_view buf, std::size_t i, spec::DType t) {
  switch (t) {
    case spec::DType::f16: return util::half_to_float(load_elem<std::uint16_t>(buf, i));
    case spec::DType::i32: return load_elem<std::int32_t>(buf, i);
    default: return load_elem<float>(buf, i);
  }
}

json key_to_json(const spec::InputKey& key) {
  json scalars = json::array();
  for (const auto& [name, v] : key.scalars) {
    json s = {{"name", name}, {"dtype", spec::to_string(spec::dtype_of(v))}};
    if (const auto* h = std::get_if<spec::Half>(&v)) {
      s["bits"] = h->bits;
    } else {
      s["value"] = spec::format_value(v);
    }
    scalars.push_back(s);
  }
  json sizes = json::array();
  for (const auto& [name, n] : key.array_sizes) sizes.push_back({{"array", name}, {"size", n}});
  return {{"canonical", key.canonical()}, {"scalars", scalars}, {"array_sizes", sizes}};
}

spec::InputKey key_from_json(const json& j) {
  spec::InputKey key;
  for (const auto& s : j.at("scalars")) {
    const auto name = s.at("name").get<std::string>();
    const auto dtype = s.at("dtype").get<std::string>();
    if (dtype == "f16") {
      key.scalars.emplace_back(name, spec::Half{s.at("bits").get<std::uint16_t>()});
    } else if (dtype == "f32") {
      key.scalars.emplace_back(name, std::stof(s.at("value").get<std::string>()));
    } else {
      key.scalars.emplace_back(name, static_cast<std::int32_t>(std::stol(s.at("value").get<std::string>())));
    }
  }
  for (const auto& a : j.at("array_sizes")) {
    key.array_sizes.emplace_back(a.at("array").get<std::string>(), a.at("size").get<std::int64_t>());
  }
  return key;
}

std::string sample_status(backend::RunStatus s) {
  switch (s) {
    case backend::RunStatus::invalid_config: return "invalid_config";
    case backend::RunStatus::compile_error: return "compile_error";
    case backend::RunStatus::timeout: return "timeout";
    default: return "runtime_error";
  }
}

Severity parse_severity(std::string_view s) {
  if (s == "error") return Severity::error;
  if (s == "warning") return Severity::warning;
  if (s == "info") return Severity::info;
  throw Error("ManifestError", fmt::format("unknown severity '{}'", s));
}

}  // namespace

double TolerancePolicy::effective_rel_tol() const {
  if (!reduction_dim_hint || *reduction_dim_hint <= 64) return rel_tol;
  return rel_tol * std::sqrt(static_cast<double>(*reduction_dim_hint) / 64.0);
}

TolerancePolicy default_tolerance(spec::DType dtype) {
  switch (dtype) {
    case spec::DType::f16: return {1e-3, 1e-2, dtype, std::nullopt};
    case spec::DType::i32: return {0.0, 0.0, dtype, std::nullopt};
    default: return {1e-6, 1e-3, dtype, std::nullopt};
  }
}

CompareResult compare_buffers(std::string_view candidate, std::string_view reference, const TolerancePolicy& policy) {
  const std::size_t width = spec::element_bytes(policy.dtype);
  if (candidate.size() != reference.size() || candidate.size() % width != 0) {
    throw Error("LengthMismatch", fmt::format("candidate has {} bytes, reference has {} ({}-byte elements)",
                                              candidate.size(), reference.size(), width));
  }
  const bool exact = policy.dtype == spec::DType::i32;
  const double abs_tol = exact ? 0.0 : policy.abs_tol;
  const double rel_tol = exact ? 0.0 : policy.effective_rel_tol();
  CompareResult out;
  for (std::size_t i = 0, n = candidate.size() / width; i < n; ++i) {
    const double c = element(candidate, i, policy.dtype);
    const double r = element(reference, i, policy.dtype);
    double err = std::fabs(c - r);
    bool ok = err <= abs_tol + rel_tol * std::fabs(r);
    if (std::isnan(c) || std::isnan(r)) {
      ok = std::isnan(c) && std::isnan(r);
      err = ok ? 0.0 : INFINITY;
    } else if (std::isinf(c) || std::isinf(r)) {
      ok = c == r;
      err = ok ? 0.0 : INFINITY;
    }
    out.worst_error = std::max(out.worst_error, err);
    if (!ok && !out.first_mismatch_index) {
      out.match = false;
      out.first_mismatch_index = i;
    }
  }
  return out;
}

const ReferenceEntry* ReferenceStore::find(const spec::InputKey& key) const {
  const auto it = entries.find(key.hash());
  return it == entries.end() ? nullptr : &it->second;
}

bool ReferenceStore::operator==(const ReferenceStore& o) const {
  if (seed_digest != o.seed_digest || entries.size() != o.entries.size()) return false;
  for (const auto& [h, e] : entries) {
    const auto it = o.entries.find(h);
    if (it == o.entries.end() || !(it->second.key == e.key) || it->second.buffers != e.buffers) return false;
  }
  return true;
}

void ReferenceStore::save(const fs::path& dir) const {
  json index = {{"seed_digest", seed_digest}, {"entries", json::array()}};
  for (const auto& [hash, e] : entries) {
    json arrays = json::array();
    for (const auto& [name, buf] : e.buffers) {
      util::write_file_atomic(dir / "refs" / hash / (name + ".bin"), buf);
      arrays.push_back(name);
    }
    index["entries"].push_back({{"hash", hash}, {"key", key_to_json(e.key)}, {"arrays", arrays}});
  }
  util::write_file_atomic(dir / "index.json", index.dump(2) + "\n");
}

ReferenceStore ReferenceStore::load(const fs::path& dir) {
  ReferenceStore store;
  try {
    const auto index = json::parse(util::read_file(dir / "index.json"));
    store.seed_digest = index.at("seed_digest").get<std::string>();
    for (const auto& e : index.at("entries")) {
      ReferenceEntry entry{key_from_json(e.at("key")), {}};
      const auto hash = e.at("hash").get<std::string>();
      if (entry.key.hash() != hash) throw Error("CorruptReference", fmt::format("key hash mismatch for {}", hash));
      for (const auto& name : e.at("arrays")) {
        entry.buffers[name.get<std::string>()] =
            util::read_file(dir / "refs" / hash / (name.get<std::string>() + ".bin"));
      }
      store.entries.emplace(hash, std::move(entry));
    }
  } catch (const json::exception& e) {
    throw Error("CorruptReference", fmt::format("{}: {}", (dir / "index.json").string(), e.what()));
  }
  return store;
}

ReferenceStore build_reference(const context::KernelContext& seed, backend::Runtime& runtime, std::size_t budget,
                               std::uint64_t seed_value, int parallel_compile) {
  if (!seed.spec.has_outputs()) throw Error("SeedExecutionFailure", "no outputs declared");
  const auto all = spec::enumerate_execution_params(seed.spec);
  std::vector<spec::ExecutionParams> per_key;
  std::set<std::string> seen;
  for (const auto& p : all) {
    if (seen.insert(p.input_key().hash()).second) per_key.push_back(p);
  }
  if (per_key.empty()) throw Error("SeedExecutionFailure", "the seed specification admits no execution parameters");
  const auto chosen = spec::sample_from(seed.spec, per_key, budget, seed_value);

  std::vector<backend::Job> jobs;
  for (const auto& p : chosen) jobs.push_back({seed, p, {{0, 1}, true, false}});
  const auto results = runtime.execute_batch(jobs, parallel_compile);

  ReferenceStore store;
  store.seed_digest = context::digest(seed).hash;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const auto& r = results[i];
    if (r.status != backend::RunStatus::ok) {
      throw Error("SeedExecutionFailure", fmt::format("seed run {} ended with {}: {}", chosen[i].label(),
                                                      backend::to_string(r.status), r.stderr_excerpt));
    }
    ReferenceEntry entry{chosen[i].input_key(), {}};
    for (const auto& a : seed.spec.arrays) {
      if (!a.is_output) continue;
      const auto it = r.outputs.find(a.name);
      if (it == r.outputs.end()) {
        throw Error("SeedExecutionFailure", fmt::format("seed run {} produced no '{}'", chosen[i].label(), a.name));
      }
      entry.buffers[a.name] = it->second;
    }
    store.entries.emplace(entry.key.hash(), std::move(entry));
  }
  return store;
}

std::string_view to_string(Severity s) noexcept {
  switch (s) {
    case Severity::info: return "info";
    case Severity::warning: return "warning";
    case Severity::error: return "error";
  }
  return "info";
}

ExternalValidatorPlugin::ExternalValidatorPlugin(const fs::path& manifest) : dir_(manifest.parent_path()) {
  try {
    const auto j = json::parse(util::read_file(manifest));
    id_ = j.at("id").get<std::string>();
    backends_ = j.value("backends", std::vector<std::string>{});
    command_ = j.at("command").get<std::string>();
    timeout_ = std::chrono::seconds(j.value("timeout_s", 60));
    for (const auto& f : j.value("findings", json::array())) {
      patterns_.emplace_back(parse_severity(f.at("severity").get<std::string>()),
                             std::regex(f.at("regex").get<std::string>()));
    }
  } catch (const json::exception& e) {
    throw Error("ManifestError", fmt::format("{}: {}", manifest.string(), e.what()));
  } catch (const std::regex_error& e) {
    throw Error("ManifestError", fmt::format("{}: bad regex: {}", manifest.string(), e.what()));
  }
}

std::vector<Finding> ExternalValidatorPlugin::inspect(const PluginInput& input) {
  util::TempDir scratch("peak-plugin");
  json job = {{"bundle", input.bundle_dir.string()}, {"backend", input.ctx.backend}, {"runs", json::array()}};
  for (const auto& r : input.runs) job["runs"].push_back({{"params", r.params_label}, {"executable", r.executable}});
  const auto job_path = scratch.path() / "job.json";
  util::write_file(job_path, job.dump(2));

  std::vector<std::string> argv;
  std::istringstream words(command_);
  for (std::string tok; words >> tok;) {
    argv.push_back(util::render_template(tok, [&](std::string_view name) -> std::optional<std::string> {
      if (name == "bundle") return input.bundle_dir.string();
      if (name == "job") return job_path.string();
      if (name == "plugin_dir") return dir_.string();
      if (name == "executable") return input.runs.empty() ? std::string{} : input.runs.front().executable.string();
      return std::nullopt;
    }));
  }
  util::ProcessOptions opts;
  opts.timeout = std::chrono::duration_cast<std::chrono::milliseconds>(timeout_);
  const auto res = util::run_process(argv, opts);

  std::vector<Finding> out;
  for (const auto& line : util::split_lines(res.out)) {
    for (const auto& [severity, re] : patterns_) {
      std::smatch m;
      if (std::regex_search(line, m, re)) {
        out.push_back({id_, severity, m.size() > 1 ? m[1].str() : line});
        break;
      }
    }
  }
  if (!res.ok()) {
    const std::string why = res.timed_out      ? "timed out"
                            : res.term_signal ? fmt::format("was killed by signal {}", res.term_signal)
                                              : fmt::format("exited with code {}", res.exit_code);
    out.push_back({id_, Severity::warning,
                   util::truncate(fmt::format("plugin {}: {}", why, util::trim(res.err)), 2000)});
  }
  return out;
}

void PluginRegistry::register_plugin(std::shared_ptr<ValidatorPlugin> plugin) {
  const auto id = plugin->id();
  for (const auto& p : plugins_) {
    if (p->id() == id) throw Error("DuplicatePlugin", fmt::format("validator plugin '{}' is already registered", id));
  }
  plugins_.push_back(std::move(plugin));
}

void PluginRegistry::load_directory(const fs::path& dir) {
  if (!fs::is_directory(dir)) return;
  std::vector<fs::path> manifests;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".json") manifests.push_back(e.path());
  }
  std::sort(manifests.begin(), manifests.end());
  for (const auto& m : manifests) register_plugin(std::make_shared<ExternalValidatorPlugin>(m));
}

std::vector<std::string> PluginRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& p : plugins_) out.push_back(p->id());
  return out;
}

std::vector<Finding> PluginRegistry::run(const PluginInput& input) const {
  std::vector<Finding> out;
  for (const auto& p : plugins_) {
    const auto b = p->backends();
    if (!b.empty() && std::find(b.begin(), b.end(), input.ctx.backend) == b.end()) continue;
    try {
      auto found = p->inspect(input);
      out.insert(out.end(), found.begin(), found.end());
    } catch (const std::exception& e) {
      out.push_back({p->id(), Severity::warning, fmt::format("plugin failed: {}", e.what())});
    }
  }
  return out;
}

bool ValidationReport::has_status(std::string_view status) const {
  return std::any_of(samples.begin(), samples.end(), [&](const SampleRecord& s) { return s.status == status; });
}

std::string ValidationReport::feedback() const {
  if (pass) return {};
  std::string out = reason + "\n";
  for (const auto& s : samples) {
    if (s.status == "match" || s.status == "invalid_config") continue;
    if (s.status == "mismatch") {
      out += fmt::format("output '{}' differs from the reference for {}: first mismatch at flat index {}, "
                         "worst absolute error {:g}\n",
                         s.mismatch_array, s.params_label, s.first_mismatch_index.value_or(0), s.worst_error);
    } else {
      out += fmt::format("{} for {}:\n{}\n", s.status, s.params_label, s.detail);
    }
    break;
  }
  for (const auto& f : findings) {
    if (f.severity == Severity::error) out += fmt::format("{} reported: {}\n", f.plugin_id, f.message);
  }
  return out;
}

json to_json(const ValidationReport& report) {
  json samples = json::array();
  for (const auto& s : report.samples) {
    json j = {{"params", s.params_label}, {"input_key", s.input_key}, {"status", s.status},
              {"worst_error", std::isfinite(s.worst_error) ? json(s.worst_error) : json("inf")}};
    if (s.first_mismatch_index) j["first_mismatch_index"] = *s.first_mismatch_index;
    if (!s.mismatch_array.empty()) j["array"] = s.mismatch_array;
    if (!s.detail.empty()) j["detail"] = s.detail;
    samples.push_back(std::move(j));
  }
  json findings = json::array();
  for (const auto& f : report.findings) {
    findings.push_back({{"plugin", f.plugin_id}, {"severity", to_string(f.severity)}, {"message", f.message}});
  }
  return {{"verdict", report.pass ? "pass" : "fail"},
          {"sampled", report.sampled},
          {"reason", report.reason},
          {"samples", samples},
          {"plugin_findings", findings}};
}

ValidationReport report_from_json(const json& j) {
  ValidationReport r;
  r.pass = j.at("verdict") == "pass";
  r.sampled = j.at("sampled").get<std::size_t>();
  r.reason = j.value("reason", std::string{});
  for (const auto& s : j.at("samples")) {
    SampleRecord rec;
    rec.params_label = s.at("params").get<std::string>();
    rec.input_key = s.value("input_key", std::string{});
    rec.status = s.at("status").get<std::string>();
    rec.worst_error = s.at("worst_error").is_string() ? INFINITY : s.at("worst_error").get<double>();
    if (s.contains("first_mismatch_index")) rec.first_mismatch_index = s["first_mismatch_index"].get<std::size_t>();
    rec.mismatch_array = s.value("array", std::string{});
    rec.detail = s.value("detail", std::string{});
    r.samples.push_back(std::move(rec));
  }
  for (const auto& f : j.value("plugin_findings", json::array())) {
    r.findings.push_back({f.at("plugin").get<std::string>(), parse_severity(f.at("severity").get<std::string>()),
                          f.at("message").get<std::string>()});
  }
  return r;
}

ValidationReport validate(const context::KernelContext& ctx, const ReferenceStore& refs, backend::Runtime& runtime,
                          const ValidateOptions& options, const PluginRegistry* plugins) {
  if (options.budget == 0) throw Error("ValueError", "validation budget must be positive");
  std::vector<spec::ExecutionParams> space;
  for (auto& p : spec::enumerate_execution_params(ctx.spec)) {
    if (refs.find(p.input_key())) space.push_back(std::move(p));
  }
  if (space.empty()) {
    throw Error("IncompatibleReference", "no valid execution parameter of this context has a reference entry");
  }
  std::set<std::string> outputs;
  for (const auto& a : ctx.spec.arrays) {
    if (a.is_output) outputs.insert(a.name);
  }
  std::set<std::string> ref_outputs;
  for (const auto& [name, buf] : refs.entries.begin()->second.buffers) ref_outputs.insert(name);
  if (outputs != ref_outputs) {
    throw Error("IncompatibleReference", "the context's output arrays differ from the reference's");
  }

  const auto sampled = spec::sample_from(ctx.spec, space, options.budget, options.seed);
  std::vector<backend::Job> jobs;
  for (const auto& p : sampled) jobs.push_back({ctx, p, {{0, 1}, true, false}});
  const auto results = runtime.execute_batch(jobs, options.parallel_compile);

  ValidationReport report;
  report.sampled = sampled.size();
  std::vector<PluginRun> plugin_runs;
  for (std::size_t i = 0; i < sampled.size(); ++i) {
    const auto& r = results[i];
    const auto key = sampled[i].input_key();
    SampleRecord rec{sampled[i].label(), key.canonical(), {}, 0.0, std::nullopt, {}, {}};
    if (!r.artifact.empty()) plugin_runs.push_back({rec.params_label, r.artifact});
    if (r.status != backend::RunStatus::ok) {
      rec.status = sample_status(r.status);
      rec.detail = r.stderr_excerpt;
      report.samples.push_back(std::move(rec));
      continue;
    }
    rec.status = "match";
    const auto* ref = refs.find(key);
    for (const auto& a : ctx.spec.arrays) {
      if (!a.is_output) continue;
      const auto out = r.outputs.find(a.name);
      if (out == r.outputs.end()) {
        rec.status = "runtime_error";
        rec.detail = fmt::format("run produced no output '{}'", a.name);
        break;
      }
      auto policy = options.policies.count(a.elem_dtype) ? options.policies.at(a.elem_dtype)
                                                         : default_tolerance(a.elem_dtype);
      policy.dtype = a.elem_dtype;
      if (options.reduction_dim_hint) policy.reduction_dim_hint = options.reduction_dim_hint;
      CompareResult cmp;
      try {
        cmp = compare_buffers(out->second, ref->buffers.at(a.name), policy);
      } catch (const Error& e) {
        rec.status = "mismatch";
        rec.mismatch_array = a.name;
        rec.detail = e.what();
        rec.worst_error = INFINITY;
        break;
      }
      rec.worst_error = std::max(rec.worst_error, cmp.worst_error);
      if (!cmp.match && rec.status == "match") {
        rec.status = "mismatch";
        rec.mismatch_array = a.name;
        rec.first_mismatch_index = cmp.first_mismatch_index;
      }
    }
    report.samples.push_back(std::move(rec));
  }

  if (plugins) {
    util::TempDir bundle("peak-validate");
    context::save_bundle(ctx, bundle.path());
    report.findings = plugins->run({ctx, bundle.path(), plugin_runs});
  }

  const auto count = [&](std::string_view status) {
    return std::count_if(report.samples.begin(), report.samples.end(),
                         [&](const SampleRecord& s) { return s.status == status; });
  };
  const auto invalid = count("invalid_config");
  const auto matched = count("match");
  const bool plugin_error = std::any_of(report.findings.begin(), report.findings.end(),
                                        [](const Finding& f) { return f.severity == Severity::error; });
  if (invalid == static_cast<long>(report.samples.size())) {
    report.reason = "no valid samples";
  } else if (matched + invalid != static_cast<long>(report.samples.size())) {
    std::vector<std::string> parts;
    for (const char* s : {"compile_error", "runtime_error", "timeout", "mismatch"}) {
      if (const auto c = count(s)) parts.push_back(fmt::format("{} {}", c, s));
    }
    std::string joined;
    for (std::size_t i = 0; i < parts.size(); ++i) joined += (i ? ", " : "") + parts[i];
    report.reason = fmt::format("{} of {} samples failed ({})", report.samples.size() - matched - invalid,
                                report.samples.size(), joined);
  } else if (plugin_error) {
    report.reason = "a validator plugin reported an error";
  }
  report.pass = report.reason.empty();
  return report;
}

}  // namespace peak::validation
