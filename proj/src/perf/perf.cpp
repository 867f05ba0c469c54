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

#include "peak/perf/perf.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "peak/error.hpp"
#include "peak/spec/enumerate.hpp"
#include "peak/spec/eval.hpp"
#include "peak/spec/parser.hpp"
#include "peak/util/fs.hpp"
#include "peak/util/half.hpp"
#include "peak/util/splitmix.hpp"
#include "peak/util/subprocess.hpp"
#include "peak/util/text.hpp"

namespace peak::perf {

namespace {

using nlohmann::json;

std::optional<backend::RunStatus> parse_status(const std::string& s) {
  using backend::RunStatus;
  for (auto st : {RunStatus::ok, RunStatus::invalid_config, RunStatus::compile_error, RunStatus::runtime_error,
                  RunStatus::timeout}) {
    if (backend::to_string(st) == s) return st;
  }
  return std::nullopt;
}

json tuning_json(const TuningValues& t) {
  json j = json::object();
  for (const auto& [k, v] : t) j[k] = v;
  return j;
}

// nlohmann objects are name-sorted; keep the order of the declarations.
TuningValues tuning_from_json(const json& j, const std::vector<std::string>& order) {
  TuningValues t;
  for (const auto& name : order) {
    if (j.contains(name)) t.emplace_back(name, j.at(name).get<std::int64_t>());
  }
  for (const auto& [k, v] : j.items()) {
    if (std::find(order.begin(), order.end(), k) == order.end()) t.emplace_back(k, v.get<std::int64_t>());
  }
  return t;
}

json point_json(const RankedPoint& p) {
  return {{"tuning", tuning_json(p.tuning)},
          {"order", [&] {
             json names = json::array();
             for (const auto& [k, v] : p.tuning) names.push_back(k);
             return names;
           }()},
          {"mean_time_ms", p.mean_time_ms},
          {"enum_index", p.enum_index},
          {"status", p.status}};
}

RankedPoint point_from_json(const json& j) {
  RankedPoint p;
  p.tuning = tuning_from_json(j.at("tuning"), j.value("order", std::vector<std::string>{}));
  p.mean_time_ms = j.at("mean_time_ms").get<double>();
  p.enum_index = j.at("enum_index").get<std::size_t>();
  p.status = j.value("status", "ok");
  return p;
}

json key_json(const spec::InputKey& key) {
  json scalars = json::array(), sizes = json::array();
  for (const auto& [k, v] : key.scalars) {
    scalars.push_back({k, spec::to_string(spec::dtype_of(v)), spec::format_value(v)});
  }
  for (const auto& [k, v] : key.array_sizes) sizes.push_back({k, v});
  return {{"canonical", key.canonical()}, {"scalars", scalars}, {"array_sizes", sizes}};
}

spec::ScalarValue parse_scalar_text(const std::string& dtype, const std::string& text) {
  const auto t = spec::parse_dtype(dtype);
  if (!t) throw Error("CorruptReport", "unknown dtype '" + dtype + "'");
  switch (*t) {
    case spec::DType::i32: return static_cast<std::int32_t>(std::stol(text));
    case spec::DType::f32: return std::stof(text);
    case spec::DType::f16: return spec::Half{util::float_to_half(std::stof(text))};
  }
  return 0;
}

spec::InputKey key_from_json(const json& j) {
  spec::InputKey key;
  for (const auto& s : j.at("scalars")) {
    key.scalars.emplace_back(s.at(0).get<std::string>(),
                             parse_scalar_text(s.at(1).get<std::string>(), s.at(2).get<std::string>()));
  }
  for (const auto& s : j.at("array_sizes")) key.array_sizes.emplace_back(s.at(0).get<std::string>(), s.at(1).get<std::int64_t>());
  return key;
}

class MemoMeasurer {
 public:
  explicit MemoMeasurer(Measurer& inner) : inner_(inner) {}
  const PointResult& get(const spec::ExecutionParams& p) {
    const auto label = p.tuning_label();
    auto it = cache_.find(label);
    if (it == cache_.end()) {
      auto res = inner_.measure(std::span(&p, 1));
      if (res.size() != 1) throw Error("ProtocolViolation", "measurer returned the wrong number of results");
      it = cache_.emplace(label, std::move(res.front())).first;
    }
    return it->second;
  }
  const std::map<std::string, PointResult>& results() const { return cache_; }

 private:
  Measurer& inner_;
  std::map<std::string, PointResult> cache_;
};

TunerJob make_job(const spec::InputSpec& spec, const spec::InputKey& key,
                  const std::vector<spec::ExecutionParams>& space, std::size_t budget, std::uint64_t seed) {
  TunerJob job;
  job.spec = &spec;
  job.input_key = key;
  job.budget = budget;
  job.seed = seed;
  for (const auto& p : space) job.space.push_back(p.tuning);
  return job;
}

MeasureFn make_measure_fn(const std::vector<spec::ExecutionParams>& space, MemoMeasurer& memo) {
  auto by_label = std::make_shared<std::map<std::string, const spec::ExecutionParams*>>();
  for (const auto& p : space) (*by_label)[p.tuning_label()] = &p;
  return [by_label, &memo](const TuningValues& tuning) -> std::optional<double> {
    auto it = by_label->find(tuning_label(tuning));
    if (it == by_label->end()) return std::nullopt;  // outside the domain: never executed
    const auto& r = memo.get(*it->second);
    if (r.status != backend::RunStatus::ok) return std::nullopt;
    return r.mean_time_ms;
  };
}

Distribution summarize(const std::vector<double>& v, int failed) {
  Distribution d;
  d.repeats = static_cast<int>(v.size());
  d.failed = failed;
  if (v.empty()) return d;
  d.min = *std::min_element(v.begin(), v.end());
  d.max = *std::max_element(v.begin(), v.end());
  d.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  return d;
}

}  // namespace

std::string tuning_label(const TuningValues& tuning) {
  std::string out;
  for (const auto& [k, v] : tuning) {
    if (!out.empty()) out += ',';
    out += fmt::format("{}={}", k, v);
  }
  return out;
}

// ---- measurers ----

RuntimeMeasurer::RuntimeMeasurer(context::KernelContext ctx, backend::Runtime& runtime, backend::TimingPolicy policy,
                                 int parallel_compile)
    : ctx_(std::move(ctx)), runtime_(runtime), policy_(policy), parallel_compile_(parallel_compile) {}

std::vector<PointResult> RuntimeMeasurer::measure(std::span<const spec::ExecutionParams> points) {
  std::vector<backend::Job> jobs;
  jobs.reserve(points.size());
  for (const auto& p : points) jobs.push_back({ctx_, p, backend::DriverOptions{policy_, false, true}});
  const auto results = runtime_.execute_batch(jobs, parallel_compile_);
  std::vector<PointResult> out;
  out.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    out.push_back({points[i], results[i].status, results[i].mean_time_ms, results[i].run_times_ms,
                   results[i].stderr_excerpt});
  }
  return out;
}

std::vector<PointResult> FunctionMeasurer::measure(std::span<const spec::ExecutionParams> points) {
  std::vector<PointResult> out;
  for (const auto& p : points) {
    ++calls_;
    auto r = fn_(p);
    r.params = p;
    out.push_back(std::move(r));
  }
  return out;
}

// ---- tuners ----

TunerResult ExhaustiveTuner::tune(const TunerJob& job, const MeasureFn& measure) {
  TunerResult r;
  const auto n = std::min(job.budget, job.space.size());
  for (std::size_t i = 0; i < n; ++i) {
    ++r.proposals;
    const auto t = measure(job.space[i]);
    if (t && (!r.best || *t < r.best_time_ms)) {
      r.best = job.space[i];
      r.best_time_ms = *t;
    }
  }
  return r;
}

TunerResult RandomSearchTuner::tune(const TunerJob& job, const MeasureFn& measure) {
  // Partial Fisher-Yates over indices; measure in draw order.
  std::vector<std::size_t> idx(job.space.size());
  std::iota(idx.begin(), idx.end(), 0);
  util::SplitMix64 rng(job.seed);
  const auto n = std::min(job.budget, idx.size());
  TunerResult r;
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.next() % (idx.size() - i));
    std::swap(idx[i], idx[j]);
    ++r.proposals;
    const auto& tuning = job.space[idx[i]];
    const auto t = measure(tuning);
    if (t && (!r.best || *t < r.best_time_ms)) {
      r.best = tuning;
      r.best_time_ms = *t;
    }
  }
  return r;
}

ExternalTuner::ExternalTuner(std::string id, std::vector<std::string> argv, std::chrono::milliseconds line_timeout)
    : id_(std::move(id)), argv_(std::move(argv)), line_timeout_(line_timeout) {
  if (argv_.empty()) throw Error("ManifestError", "tuner '" + id_ + "' has an empty command");
}

std::shared_ptr<ExternalTuner> ExternalTuner::from_manifest(const fs::path& manifest) {
  try {
    const auto j = json::parse(util::read_file(manifest));
    auto argv = j.at("command").get<std::vector<std::string>>();
    for (auto& a : argv) {
      const auto local = manifest.parent_path() / a;
      if (!a.empty() && a.front() != '/' && a.find('/') != std::string::npos && fs::exists(local)) a = local.string();
    }
    return std::make_shared<ExternalTuner>(j.at("id").get<std::string>(), std::move(argv),
                                           std::chrono::seconds(j.value("timeout_s", 60)));
  } catch (const json::exception& e) {
    throw Error("ManifestError", fmt::format("{}: {}", manifest.string(), e.what()));
  }
}

TunerResult ExternalTuner::tune(const TunerJob& job, const MeasureFn& measure) {
  json decls = json::array();
  for (const auto& d : job.spec->tuning) decls.push_back({{"name", d.name}, {"values", spec::tuning_values(d)}});
  const json hello{{"type", "job"},     {"tuning", decls},        {"budget", job.budget},
                   {"seed", job.seed}, {"input", job.input_key.canonical()}};

  util::InteractiveProcess proc(argv_);
  proc.write(hello.dump() + "\n");
  TunerResult r;
  auto fail = [&](const std::string& why) -> Error {
    proc.close_stdin();
    proc.wait(std::chrono::milliseconds(200));
    return Error("PluginFailure", fmt::format("tuner '{}': {}", id_, why));
  };
  while (true) {
    auto line = proc.read_line(line_timeout_);
    if (!line) {
      const auto err = util::trim(proc.drain_stderr());
      throw fail(err.empty() ? "exited or timed out without 'done'" : "exited: " + std::string(err));
    }
    if (util::trim(*line).empty()) continue;
    json msg;
    try {
      msg = json::parse(*line);
    } catch (const json::exception&) {
      throw fail("malformed line: " + util::truncate(*line, 200));
    }
    const auto type = msg.value("type", "");
    if (type == "done") break;
    if (type != "measure") throw fail("unexpected message type '" + type + "'");
    if (r.proposals >= job.budget) throw fail("exceeded its budget of " + std::to_string(job.budget));
    TuningValues t;
    try {
      for (const auto& d : job.spec->tuning) t.emplace_back(d.name, msg.at("tuning").at(d.name).get<std::int64_t>());
    } catch (const json::exception&) {
      throw fail("measure request lacks a tuning value: " + util::truncate(*line, 200));
    }
    ++r.proposals;
    const auto time = measure(t);
    json reply{{"type", "result"}};
    if (time) {
      reply["time_ms"] = *time;
      if (!r.best || *time < r.best_time_ms) {
        r.best = t;
        r.best_time_ms = *time;
      }
    } else {
      reply["invalid"] = true;
    }
    proc.write(reply.dump() + "\n");
  }
  proc.close_stdin();
  const int code = proc.wait();
  if (code != 0) throw Error("PluginFailure", fmt::format("tuner '{}' exited with status {}", id_, code));
  return r;
}

TunerRegistry TunerRegistry::with_builtins() {
  TunerRegistry r;
  r.register_plugin(std::make_shared<ExhaustiveTuner>());
  r.register_plugin(std::make_shared<RandomSearchTuner>());
  return r;
}

void TunerRegistry::register_plugin(std::shared_ptr<TunerPlugin> plugin) {
  for (const auto& p : plugins_) {
    if (p->id() == plugin->id()) {
      throw Error("DuplicatePlugin", fmt::format("tuner plugin '{}' is already registered", plugin->id()));
    }
  }
  plugins_.push_back(std::move(plugin));
}

void TunerRegistry::load_directory(const fs::path& dir) {
  if (!fs::is_directory(dir)) return;
  std::vector<fs::path> manifests;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".json") manifests.push_back(e.path());
  }
  std::sort(manifests.begin(), manifests.end());
  for (const auto& m : manifests) register_plugin(ExternalTuner::from_manifest(m));
}

TunerPlugin& TunerRegistry::get(const std::string& id) const {
  for (const auto& p : plugins_) {
    if (p->id() == id) return *p;
  }
  throw Error("UnknownPlugin", fmt::format("no tuner plugin '{}'", id));
}

std::vector<std::string> TunerRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& p : plugins_) out.push_back(p->id());
  return out;
}

// ---- evaluation ----

std::int64_t FlopsModel::flops(const spec::InputKey& key) const {
  spec::Bindings b;
  for (const auto& [name, v] : key.scalars) {
    if (auto i = std::get_if<std::int32_t>(&v)) b[name] = *i;
  }
  for (const auto& [name, v] : key.array_sizes) b[name + ".size"] = v;
  std::int64_t f = 0;
  try {
    f = spec::evaluate(*spec::parse_expr(expression), b);
  } catch (const Error& e) {
    throw Error("InvalidFlopsModel", fmt::format("'{}': {}", expression, e.what()));
  }
  if (f <= 0) throw Error("InvalidFlopsModel", fmt::format("'{}' evaluates to {} for {}", expression, f, key.canonical()));
  return f;
}

std::string Strategy::describe() const {
  switch (kind) {
    case Kind::exhaustive: return "exhaustive";
    case Kind::random: return fmt::format("random(budget={},seed={})", budget, seed);
    case Kind::tuner: return fmt::format("tuner({},budget={},repeats={},seed={})", plugin, budget, repeats, seed);
  }
  return "?";
}

std::vector<spec::ExecutionParams> key_space(const spec::InputSpec& spec, const spec::InputKey& key) {
  std::vector<spec::ExecutionParams> out;
  for (auto& p : spec::enumerate_execution_params(spec)) {
    if (p.input_key() == key) out.push_back(std::move(p));
  }
  return out;
}

spec::InputKey select_input_key(const spec::InputSpec& spec, const std::string& selector) {
  const auto keys = spec::enumerate_input_keys(spec);
  if (keys.empty()) throw Error("UnknownInputKey", "the spec has no valid execution parameters");
  if (util::trim(selector).empty()) return keys.back();
  std::map<std::string, std::string> want;
  std::stringstream ss(selector);
  for (std::string part; std::getline(ss, part, ',');) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw Error("UnknownInputKey", "expected name=value in '" + selector + "'");
    want[std::string(util::trim(part.substr(0, eq)))] = std::string(util::trim(part.substr(eq + 1)));
  }
  for (const auto& [name, v] : want) {
    if (!spec.find_scalar(name)) throw Error("UnknownInputKey", "no input scalar '" + name + "'");
  }
  for (const auto& key : keys) {
    bool match = true;
    for (const auto& [name, value] : key.scalars) {
      auto it = want.find(name);
      if (it != want.end() && spec::format_value(value) != it->second) match = false;
    }
    if (match) return key;
  }
  throw Error("UnknownInputKey", "no input key matches '" + selector + "'");
}

PerfReport evaluate(const context::KernelContext& ctx, const PerfQuery& query, Measurer& measurer,
                    const TunerRegistry* tuners) {
  if (query.keep_top < 1) throw Error("InvalidQuery", "keep_top must be >= 1");
  const auto space = key_space(ctx.spec, query.input_key);
  if (space.empty()) {
    throw Error("UnknownInputKey", "no valid execution parameters for " + query.input_key.canonical());
  }
  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < space.size(); ++i) index_of[space[i].tuning_label()] = i;

  PerfReport report;
  report.ctx_digest = context::digest(ctx).hash;
  report.input_key = query.input_key;
  report.strategy = query.strategy.describe();

  std::vector<PointResult> results;
  const auto& st = query.strategy;
  switch (st.kind) {
    case Strategy::Kind::exhaustive:
      results = measurer.measure(space);
      break;
    case Strategy::Kind::random: {
      if (st.budget < 1) throw Error("InvalidQuery", "random budget must be >= 1");
      const auto sample = spec::sample_from(ctx.spec, space, st.budget, st.seed);
      results = measurer.measure(sample);
      break;
    }
    case Strategy::Kind::tuner: {
      if (st.budget < 1 || st.repeats < 1) throw Error("InvalidQuery", "tuner budget and repeats must be >= 1");
      static const TunerRegistry builtins = TunerRegistry::with_builtins();
      auto& plugin = (tuners ? *tuners : builtins).get(st.plugin);
      MemoMeasurer memo(measurer);
      const auto fn = make_measure_fn(space, memo);
      std::vector<double> bests;
      int failed = 0;
      for (int r = 0; r < st.repeats; ++r) {
        try {
          const auto res = plugin.tune(make_job(ctx.spec, query.input_key, space, st.budget, st.seed + r), fn);
          if (res.best) bests.push_back(res.best_time_ms);
        } catch (const Error& e) {
          if (e.code() != "PluginFailure") throw;
          ++failed;
        }
      }
      report.distribution = summarize(bests, failed);
      for (const auto& [label, res] : memo.results()) results.push_back(res);
      std::sort(results.begin(), results.end(), [&](const auto& a, const auto& b) {
        return index_of.at(a.params.tuning_label()) < index_of.at(b.params.tuning_label());
      });
      break;
    }
  }

  std::vector<RankedPoint> valid;
  for (const auto& r : results) {
    RankedPoint p{r.params.tuning, r.mean_time_ms, index_of.at(r.params.tuning_label()),
                  std::string(backend::to_string(r.status))};
    ++report.attempted;
    if (r.status == backend::RunStatus::ok) {
      ++report.evaluated;
      valid.push_back(p);
    } else if (r.status == backend::RunStatus::invalid_config) {
      ++report.pruned_invalid;
      p.mean_time_ms = 0.0;
    } else {
      ++report.failed;
      p.mean_time_ms = 0.0;
    }
    report.points.push_back(std::move(p));
  }
  if (valid.empty()) {
    throw Error("NoValidConfiguration",
                fmt::format("none of the {} evaluated points ran ({} invalid, {} failed)", report.attempted,
                            report.pruned_invalid, report.failed));
  }
  std::stable_sort(valid.begin(), valid.end(), [](const RankedPoint& a, const RankedPoint& b) {
    if (a.mean_time_ms != b.mean_time_ms) return a.mean_time_ms < b.mean_time_ms;
    return a.enum_index < b.enum_index;
  });
  valid.resize(std::min(valid.size(), query.keep_top));
  report.top_k = std::move(valid);
  report.best = report.top_k.front();

  if (query.flops) {
    report.flops_expression = query.flops->expression;
    report.flops_per_run = query.flops->flops(query.input_key);
    report.best_gflops = static_cast<double>(*report.flops_per_run) / (report.best.mean_time_ms / 1e3) / 1e9;
  }
  if (query.confirm_best > 0) {
    const auto& best_params = space.at(report.best.enum_index);
    for (int i = 0; i < query.confirm_best; ++i) {
      const auto r = measurer.measure(std::span(&best_params, 1));
      if (!r.empty() && r.front().status == backend::RunStatus::ok) {
        report.confirm_times_ms.push_back(r.front().mean_time_ms);
      }
    }
  }
  return report;
}

PerfReport evaluate(const context::KernelContext& ctx, const PerfQuery& query, backend::Runtime& runtime,
                    const TunerRegistry* tuners) {
  RuntimeMeasurer m(ctx, runtime, query.policy, query.parallel_compile);
  return evaluate(ctx, query, m, tuners);
}

double speedup(const PerfReport& a, const PerfReport& b) {
  if (!(a.input_key == b.input_key)) {
    throw Error("IncomparableReports",
                fmt::format("input keys differ: {} vs {}", a.input_key.canonical(), b.input_key.canonical()));
  }
  if (a.flops_expression != b.flops_expression) {
    throw Error("IncomparableReports", "reports use different FLOP models");
  }
  return b.best.mean_time_ms / a.best.mean_time_ms;
}

double percent_of(const PerfReport& report, double reference_time_ms) {
  if (!(reference_time_ms > 0.0)) throw Error("InvalidQuery", "reference time must be positive");
  return reference_time_ms / report.best.mean_time_ms * 100.0;
}

std::vector<SweepRow> tuner_sweep(const context::KernelContext& ctx, const spec::InputKey& key, TunerPlugin& plugin,
                                  const std::vector<std::size_t>& budgets, int repeats, Measurer& measurer) {
  if (repeats < 1) throw Error("InvalidQuery", "repeats must be >= 1");
  const auto space = key_space(ctx.spec, key);
  if (space.empty()) throw Error("UnknownInputKey", "no valid execution parameters for " + key.canonical());
  MemoMeasurer memo(measurer);
  const auto fn = make_measure_fn(space, memo);
  std::vector<SweepRow> rows;
  for (auto budget : budgets) {
    if (budget < 1) throw Error("InvalidQuery", "budgets must be >= 1");
    std::vector<double> bests;
    int failed = 0;
    for (int r = 0; r < repeats; ++r) {
      try {
        const auto res = plugin.tune(make_job(ctx.spec, key, space, budget, static_cast<std::uint64_t>(r)), fn);
        if (res.best) {
          bests.push_back(res.best_time_ms);
        } else {
          ++failed;
        }
      } catch (const Error& e) {
        if (e.code() != "PluginFailure") throw;
        ++failed;
      }
    }
    rows.push_back({budget, summarize(bests, failed)});
  }
  return rows;
}

// ---- persistence ----

json to_json(const PerfReport& r) {
  json j{{"ctx_digest", r.ctx_digest},
         {"input_key", key_json(r.input_key)},
         {"strategy", r.strategy},
         {"attempted", r.attempted},
         {"evaluated", r.evaluated},
         {"pruned_invalid", r.pruned_invalid},
         {"failed", r.failed},
         {"best", point_json(r.best)},
         {"top_k", json::array()},
         {"confirm_times_ms", r.confirm_times_ms}};
  for (const auto& p : r.top_k) j["top_k"].push_back(point_json(p));
  if (r.flops_expression) j["flops_expression"] = *r.flops_expression;
  if (r.flops_per_run) j["flops_per_run"] = *r.flops_per_run;
  if (r.best_gflops) j["best_gflops"] = *r.best_gflops;
  if (r.distribution) {
    const auto& d = *r.distribution;
    j["distribution"] = {{"min", d.min}, {"mean", d.mean}, {"max", d.max}, {"repeats", d.repeats}, {"failed", d.failed}};
  }
  return j;
}

PerfReport report_from_json(const json& j) {
  PerfReport r;
  try {
    r.ctx_digest = j.at("ctx_digest").get<std::string>();
    r.input_key = key_from_json(j.at("input_key"));
    r.strategy = j.at("strategy").get<std::string>();
    r.attempted = j.at("attempted").get<std::size_t>();
    r.evaluated = j.at("evaluated").get<std::size_t>();
    r.pruned_invalid = j.at("pruned_invalid").get<std::size_t>();
    r.failed = j.value("failed", std::size_t{0});
    r.best = point_from_json(j.at("best"));
    for (const auto& p : j.at("top_k")) r.top_k.push_back(point_from_json(p));
    r.confirm_times_ms = j.value("confirm_times_ms", std::vector<double>{});
    if (j.contains("flops_expression")) r.flops_expression = j["flops_expression"].get<std::string>();
    if (j.contains("flops_per_run")) r.flops_per_run = j["flops_per_run"].get<std::int64_t>();
    if (j.contains("best_gflops")) r.best_gflops = j["best_gflops"].get<double>();
    if (j.contains("distribution")) {
      const auto& d = j["distribution"];
      r.distribution = Distribution{d.at("min"), d.at("mean"), d.at("max"), d.at("repeats"), d.at("failed")};
    }
  } catch (const json::exception& e) {
    throw Error("CorruptReport", std::string("malformed perf report: ") + e.what());
  }
  return r;
}

std::string to_csv(const PerfReport& r) {
  std::string out;
  if (r.points.empty()) return out;
  for (const auto& [name, v] : r.points.front().tuning) out += name + ",";
  out += "status,mean_ms\n";
  for (const auto& p : r.points) {
    for (const auto& [name, v] : p.tuning) out += fmt::format("{},", v);
    out += p.status + ",";
    out += p.status == "ok" ? fmt::format("{:.17g}", p.mean_time_ms) : std::string();
    out += '\n';
  }
  return out;
}

}  // namespace peak::perf
