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

#include "peak/backend/backend.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/core.h>
#include <json.hpp>

#include "peak/error.hpp"
#include "peak/util/fs.hpp"
#include "peak/util/hash.hpp"
#include "peak/util/subprocess.hpp"
#include "peak/util/text.hpp"

namespace peak::backend {

namespace {

constexpr std::size_t kExcerptChars = 4000;
constexpr std::chrono::minutes kCompileTimeout{5};

Error manifest_error(const fs::path& path, std::string_view what) {
  return Error("ManifestError", fmt::format("{}: {}", path.string(), what));
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) {
    out += l;
    out += '\n';
  }
  return out;
}

std::string scalar_literal(const BackendDescriptor& b, const spec::ScalarValue& v) {
  if (const auto* i = std::get_if<std::int32_t>(&v)) {
    if (*i == std::numeric_limits<std::int32_t>::min()) return "(-2147483647 - 1)";
    return std::to_string(*i);
  }
  std::string f = spec::format_value(v) + "f";
  if (std::holds_alternative<float>(v)) return f;
  return util::render_template(b.f16_literal, [&](std::string_view name) -> std::optional<std::string> {
    if (name == "value") return f;
    return std::nullopt;
  });
}

std::string c_elem_pointer(spec::DType t) {
  switch (t) {
    case spec::DType::f16: return "uint16_t";
    case spec::DType::i32: return "int32_t";
    default: return "float";
  }
}

std::string init_call(const spec::ArrayDecl& a, std::int64_t count, const std::string& type) {
  const std::string suffix{spec::to_string(a.elem_dtype)};
  switch (a.init.kind) {
    case spec::InitKind::zeros:
      return fmt::format("peak_fill_zeros(PEAK_HOST({}), sizeof({}) * (size_t){});", a.name, type, count);
    case spec::InitKind::ones:
      return fmt::format("peak_fill_ones_{}(({}*)PEAK_HOST({}), {});", suffix, c_elem_pointer(a.elem_dtype), a.name,
                         count);
    case spec::InitKind::random:
      return fmt::format("peak_fill_random_{}(({}*)PEAK_HOST({}), {}, UINT64_C({}));", suffix,
                         c_elem_pointer(a.elem_dtype), a.name, count, a.init.seed);
  }
  return {};
}

struct LeaseState {
  std::mutex mu;
  std::condition_variable cv;
  int in_use = 0;
};

LeaseState& lease_state(const std::string& id) {
  static std::mutex registry_mu;
  static std::map<std::string, std::unique_ptr<LeaseState>> registry;
  std::lock_guard lock(registry_mu);
  auto& slot = registry[id];
  if (!slot) slot = std::make_unique<LeaseState>();
  return *slot;
}

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

}  // namespace

std::string_view to_string(RunStatus s) noexcept {
  switch (s) {
    case RunStatus::ok: return "ok";
    case RunStatus::invalid_config: return "invalid_config";
    case RunStatus::compile_error: return "compile_error";
    case RunStatus::runtime_error: return "runtime_error";
    case RunStatus::timeout: return "timeout";
    case RunStatus::reference_capture: return "reference_capture";
  }
  return "runtime_error";
}

BackendDescriptor load_backend(const fs::path& manifest) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(util::read_file(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw manifest_error(manifest, e.what());
  }
  const fs::path base = manifest.parent_path();
  BackendDescriptor d;
  try {
    d.id = j.at("id").get<std::string>();
    d.display_name = j.value("display_name", d.id);
    d.warp_size = j.at("warp_size").get<int>();
    d.max_threads_per_block = j.at("max_threads_per_block").get<int>();
    d.compile_command = j.at("compile_command").get<std::string>();
    d.run_timeout = std::chrono::seconds(j.value("run_timeout_s", 60));
    d.device_slots = j.value("device_slots", 1);
    d.driver_template = base / j.at("driver_template").get<std::string>();
    d.driver_source = j.value("driver_source", std::string("driver.cpp"));
    for (const auto& f : j.value("support_files", nlohmann::json::array())) {
      d.support_files.push_back(base / f.get<std::string>());
    }
    for (const auto& [k, v] : j.at("region_files").items()) {
      d.region_files[context::parse_region(k)] = v.get<std::string>();
    }
    for (const auto& [k, v] : j.at("type_names").items()) {
      const auto dt = spec::parse_dtype(k);
      if (!dt) throw manifest_error(manifest, fmt::format("unknown dtype '{}' in type_names", k));
      d.type_names[*dt] = v.get<std::string>();
    }
    d.f16_literal = j.value("f16_literal", d.f16_literal);
  } catch (const nlohmann::json::exception& e) {
    throw manifest_error(manifest, e.what());
  } catch (const Error& e) {
    throw manifest_error(manifest, e.what());
  }
  if (d.warp_size <= 0 || d.max_threads_per_block < d.warp_size) {
    throw manifest_error(manifest, "max_threads_per_block must be at least warp_size");
  }
  if (d.device_slots < 1) throw manifest_error(manifest, "device_slots must be at least 1");
  if (d.run_timeout.count() <= 0) throw manifest_error(manifest, "run_timeout_s must be positive");
  if (d.region_files.size() != 3) throw manifest_error(manifest, "region_files must name device, host and macros");
  if (!fs::exists(d.driver_template)) throw manifest_error(manifest, "driver template not found");
  for (const auto& f : d.support_files) {
    if (!fs::exists(f)) throw manifest_error(manifest, fmt::format("support file '{}' not found", f.string()));
  }
  return d;
}

BackendDescriptor find_backend(std::string_view id, const fs::path& data_dir) {
  const fs::path p = data_dir / "backends" / (std::string(id) + ".json");
  if (!fs::exists(p)) throw Error("UnknownBackend", fmt::format("no backend manifest for '{}'", id));
  return load_backend(p);
}

std::vector<std::string> list_backends(const fs::path& data_dir) {
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(data_dir / "backends")) {
    if (e.path().extension() == ".json") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::string generate_driver(const BackendDescriptor& backend, const context::KernelContext& ctx,
                            const spec::ExecutionParams& params, const DriverOptions& options) {
  if (options.policy.measured_runs < 1 || options.policy.warmup_runs < 0) {
    throw Error("InvalidPolicy", "timing policy needs measured_runs >= 1 and warmup_runs >= 0");
  }
  std::vector<std::string> decls, allocs, inits, dumps, args;
  for (const auto& a : ctx.spec.arrays) {
    const auto type_it = backend.type_names.find(a.elem_dtype);
    if (type_it == backend.type_names.end()) {
      throw Error("UnsupportedDtype",
                  fmt::format("backend '{}' has no type for {}", backend.id, spec::to_string(a.elem_dtype)));
    }
    const std::string& type = type_it->second;
    const auto count = params.array_size(a.name);
    if (!count) throw Error("MissingArraySize", fmt::format("no size for array '{}'", a.name));
    decls.push_back(fmt::format("PEAK_ARRAY_DECL({}, {})", a.name, type));
    allocs.push_back(fmt::format("  PEAK_ARRAY_ALLOC({}, {}, {})", a.name, type, *count));
    inits.push_back("  " + init_call(a, *count, type));
    inits.push_back(fmt::format("  PEAK_ARRAY_UPLOAD({}, {}, {})", a.name, type, *count));
    if (a.is_output) {
      dumps.push_back(fmt::format("    PEAK_ARRAY_DOWNLOAD({}, {}, {})", a.name, type, *count));
      dumps.push_back(fmt::format("    peak_write_output(peak_outdir, \"{}\", PEAK_HOST({}), sizeof({}) * (size_t){});",
                                  a.name, a.name, type, *count));
    }
    args.push_back(fmt::format("PEAK_ARG({})", a.name));
  }
  for (const auto& s : ctx.spec.scalars) {
    const auto* v = params.scalar(s.name);
    if (!v) throw Error("MissingScalarValue", fmt::format("no value for scalar '{}'", s.name));
    args.push_back(scalar_literal(backend, *v));
  }
  std::string arg_list;
  for (std::size_t i = 0; i < args.size(); ++i) arg_list += (i ? ", " : "") + args[i];

  const std::map<std::string, std::string, std::less<>> values = {
      {"kernel_name", ctx.kernel_name},
      {"backend", backend.id},
      {"params_label", params.label()},
      {"max_threads_per_block", std::to_string(backend.max_threads_per_block)},
      {"array_decls", join_lines(decls)},
      {"array_alloc", join_lines(allocs)},
      {"array_init", join_lines(inits)},
      {"array_dump", join_lines(dumps)},
      {"launch_args", arg_list},
      {"warmup_runs", std::to_string(options.policy.warmup_runs)},
      {"measured_runs", std::to_string(options.policy.measured_runs)},
      {"capture", options.capture ? "1" : "0"},
      {"debug", options.debug ? "1" : "0"},
  };
  return util::render_template(util::read_file(backend.driver_template),
                               [&](std::string_view name) -> std::optional<std::string> {
                                 const auto it = values.find(name);
                                 if (it == values.end()) return std::nullopt;
                                 return it->second;
                               });
}

DeviceLease::DeviceLease(const std::string& backend_id, int slots) : id_(backend_id) {
  auto& st = lease_state(id_);
  std::unique_lock lock(st.mu);
  st.cv.wait(lock, [&] { return st.in_use < std::max(slots, 1); });
  ++st.in_use;
}

DeviceLease::~DeviceLease() {
  auto& st = lease_state(id_);
  {
    std::lock_guard lock(st.mu);
    --st.in_use;
  }
  st.cv.notify_all();
}

Runtime::Runtime(BackendDescriptor backend, fs::path cache_dir) : backend_(std::move(backend)) {
  if (cache_dir.empty()) {
    util::TempDir tmp("peak-cache");
    cache_dir_ = tmp.release();
    owned_cache_ = cache_dir_;
  } else {
    cache_dir_ = fs::absolute(cache_dir);
    fs::create_directories(cache_dir_);
  }
}

Runtime::~Runtime() {
  if (owned_cache_) {
    std::error_code ec;
    fs::remove_all(*owned_cache_, ec);
  }
}

CompileResult Runtime::compile(const CompileSources& sources) {
  const auto tokens = split_ws(backend_.compile_command);
  if (tokens.empty()) throw Error("ManifestError", fmt::format("backend '{}' has no compile command", backend_.id));
  const std::string tool = util::render_template(tokens[0], [](std::string_view) { return std::nullopt; });
  if (!util::find_executable(tool)) {
    throw Error("ToolchainMissing", fmt::format("compiler '{}' for backend '{}' is not installed", tool, backend_.id));
  }

  std::string keyed = backend_.compile_command;
  for (const auto* part : {&sources.driver, &sources.macros, &sources.device, &sources.host}) {
    keyed += '\0' + std::to_string(part->size()) + '\0' + *part;
  }
  for (const auto& f : backend_.support_files) keyed += '\0' + util::read_file(f);
  const std::string key = util::sha256_hex(keyed).substr(0, 32);
  const fs::path final_dir = cache_dir_ / "artifacts" / key;
  const fs::path artifact = final_dir / "peak_driver";
  if (fs::exists(artifact)) return {true, artifact, {}, true};

  fs::create_directories(cache_dir_ / "artifacts");
  const fs::path build = util::make_unique_dir(cache_dir_ / "artifacts", "build-");
  util::write_file(build / backend_.driver_source, sources.driver);
  util::write_file(build / backend_.region_files.at(context::RegionKind::macros), sources.macros);
  util::write_file(build / backend_.region_files.at(context::RegionKind::device), sources.device);
  util::write_file(build / backend_.region_files.at(context::RegionKind::host), sources.host);
  for (const auto& f : backend_.support_files) fs::copy_file(f, build / f.filename());

  std::vector<std::string> argv;
  for (const auto& t : tokens) {
    argv.push_back(util::render_template(t, [&](std::string_view name) -> std::optional<std::string> {
      if (name == "source") return (build / backend_.driver_source).string();
      if (name == "output") return (build / "peak_driver").string();
      if (name == "dir") return build.string();
      return std::nullopt;
    }));
  }
  util::ProcessOptions opts;
  opts.timeout = kCompileTimeout;
  opts.cwd = build;
  const auto res = util::run_process(argv, opts);
  if (!res.ok()) {
    std::error_code ec;
    fs::remove_all(build, ec);
    std::string err = res.err.empty() ? res.out : res.err;
    if (res.timed_out) err += "\ncompilation timed out";
    return {false, {}, err.empty() ? std::string("compiler failed without output") : err, false};
  }
  std::error_code ec;
  fs::rename(build, final_dir, ec);
  if (ec) fs::remove_all(build, ec);  // another worker produced the same artifact
  return {true, artifact, {}, false};
}

RunResult Runtime::run(const fs::path& artifact, bool capture, std::optional<std::chrono::milliseconds> timeout) {
  RunResult r;
  std::optional<fs::path> outdir;
  if (capture) {
    fs::create_directories(cache_dir_ / "runs");
    outdir = util::make_unique_dir(cache_dir_ / "runs", "out-");
  }
  struct Cleanup {
    std::optional<fs::path>& dir;
    ~Cleanup() {
      std::error_code ec;
      if (dir) fs::remove_all(*dir, ec);
    }
  } cleanup{outdir};

  util::ProcessOptions opts;
  opts.timeout = timeout ? *timeout : std::chrono::duration_cast<std::chrono::milliseconds>(backend_.run_timeout);
  std::vector<std::string> argv{artifact.string()};
  if (outdir) argv.push_back(outdir->string());
  const auto res = util::run_process(argv, opts);
  r.stderr_excerpt = util::truncate(res.err, kExcerptChars);

  if (res.timed_out) {
    r.status = RunStatus::timeout;
    r.stderr_excerpt = util::truncate(fmt::format("run exceeded {} ms\n{}", opts.timeout->count(), res.err),
                                      kExcerptChars);
    return r;
  }
  const auto lines = util::split_lines(res.out);
  const bool invalid_line = std::any_of(lines.begin(), lines.end(),
                                        [](const std::string& l) { return util::trim(l) == "PEAK_INVALID_CONFIG"; });
  if (res.term_signal == 0 && (res.exit_code == 3 || (res.exit_code == 0 && invalid_line))) {
    r.status = RunStatus::invalid_config;
    return r;
  }
  if (!res.ok()) {
    r.status = RunStatus::runtime_error;
    const std::string why = res.term_signal ? fmt::format("killed by signal {}", res.term_signal)
                                            : fmt::format("exit code {}", res.exit_code);
    r.stderr_excerpt = util::truncate(why + "\n" + res.err, kExcerptChars);
    return r;
  }

  std::optional<double> mean;
  for (const auto& raw : lines) {
    const auto line = util::trim(raw);
    const auto fields = split_ws(line);
    if (fields.empty()) continue;
    if (fields[0] == "PEAK_TIME_MS" && fields.size() == 2) {
      mean = std::stod(fields[1]);
    } else if (fields[0] == "PEAK_RUN_MS" && fields.size() == 2) {
      r.run_times_ms.push_back(std::stod(fields[1]));
    } else if (fields[0] == "PEAK_OUT" && fields.size() >= 3) {
      if (!mean) throw Error("ProtocolViolation", "PEAK_OUT before PEAK_TIME_MS");
      const std::string path{line.substr(line.find(fields[2], fields[0].size() + fields[1].size() + 1))};
      r.outputs[fields[1]] = util::read_file(path);
    }
  }
  if (!mean) throw Error("ProtocolViolation", "driver exited 0 without a PEAK_TIME_MS line");
  if (!(*mean > 0.0)) throw Error("ProtocolViolation", fmt::format("non-positive mean time {}", *mean));
  r.status = RunStatus::ok;
  r.mean_time_ms = *mean;
  return r;
}

CompileSources Runtime::sources_for(const Job& job) const {
  auto regions = context::substitute_tuning(job.ctx, job.params);
  return {generate_driver(backend_, job.ctx, job.params, job.options), std::move(regions.device),
          std::move(regions.host), std::move(regions.macros)};
}

RunResult Runtime::run_leased(const fs::path& artifact, bool capture, std::size_t index, const BatchHooks& hooks) {
  DeviceLease lease(backend_.id, backend_.device_slots);
  if (hooks.on_run_start) hooks.on_run_start(index);
  RunResult r;
  try {
    r = run(artifact, capture);
  } catch (const Error& e) {
    r.status = RunStatus::runtime_error;
    r.stderr_excerpt = fmt::format("{}: {}", e.code(), e.what());
  }
  if (hooks.on_run_end) hooks.on_run_end(index);
  return r;
}

RunResult Runtime::execute(const Job& job) { return execute_batch({job}, 1).front(); }

std::vector<RunResult> Runtime::execute_batch(const std::vector<Job>& jobs, int parallel_compile,
                                              const BatchHooks& hooks) {
  std::vector<RunResult> results(jobs.size());
  std::vector<CompileResult> compiled(jobs.size());
  std::exception_ptr config_error;
  std::mutex error_mu;

  const auto pool = [&](std::size_t workers, const std::function<void(std::size_t)>& body) {
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
      for (std::size_t i = next++; i < jobs.size(); i = next++) body(i);
    };
    std::vector<std::thread> threads;
    for (std::size_t w = 1; w < workers; ++w) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
  };

  const auto n = jobs.size();
  pool(std::clamp<std::size_t>(static_cast<std::size_t>(std::max(parallel_compile, 1)), 1, std::max<std::size_t>(n, 1)),
       [&](std::size_t i) {
         try {
           compiled[i] = compile(sources_for(jobs[i]));
         } catch (const Error& e) {
           if (e.code() == "ToolchainMissing" || e.code() == "ManifestError") {
             std::lock_guard lock(error_mu);
             if (!config_error) config_error = std::current_exception();
           }
           compiled[i] = {false, {}, fmt::format("{}: {}", e.code(), e.what()), false};
         }
       });
  if (config_error) std::rethrow_exception(config_error);

  pool(std::min<std::size_t>(static_cast<std::size_t>(backend_.device_slots), std::max<std::size_t>(n, 1)),
       [&](std::size_t i) {
         if (!compiled[i].ok) {
           results[i].status = RunStatus::compile_error;
           results[i].stderr_excerpt = util::truncate(compiled[i].stderr_text, kExcerptChars);
           return;
         }
         results[i] = run_leased(compiled[i].artifact, jobs[i].options.capture, i, hooks);
         results[i].artifact = compiled[i].artifact;
       });
  return results;
}

}  // namespace peak::backend
