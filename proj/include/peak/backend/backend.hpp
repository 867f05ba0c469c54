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
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "peak/context/context.hpp"
#include "peak/spec/types.hpp"

namespace peak::backend {

namespace fs = std::filesystem;

struct BackendDescriptor {
  std::string id;
  std::string display_name;
  int warp_size = 32;
  int max_threads_per_block = 1024;
  // `{{source}}`, `{{output}}` and `{{dir}}` are substituted; the result is
  // split on whitespace into argv.
  std::string compile_command;
  std::chrono::seconds run_timeout{60};
  int device_slots = 1;
  fs::path driver_template;
  std::string driver_source = "driver.cpp";
  std::vector<fs::path> support_files;
  std::map<context::RegionKind, std::string> region_files;
  std::map<spec::DType, std::string> type_names;
  std::string f16_literal = "{{value}}";
};

// Throws Error("ManifestError") on malformed or inconsistent manifests.
BackendDescriptor load_backend(const fs::path& manifest);
// <data_dir>/backends/<id>.json; Error("UnknownBackend") when absent.
BackendDescriptor find_backend(std::string_view id, const fs::path& data_dir);
std::vector<std::string> list_backends(const fs::path& data_dir);

struct TimingPolicy {
  int warmup_runs = 2;
  int measured_runs = 10;
};

enum class RunStatus { ok, invalid_config, compile_error, runtime_error, timeout, reference_capture };

std::string_view to_string(RunStatus s) noexcept;

struct RunResult {
  RunStatus status = RunStatus::runtime_error;
  double mean_time_ms = 0.0;
  std::vector<double> run_times_ms;  // debug mode only
  std::map<std::string, std::string> outputs;  // raw little-endian buffers
  std::string stderr_excerpt;
  fs::path artifact;  // set when compilation succeeded
};

struct DriverOptions {
  TimingPolicy policy;
  bool capture = false;
  bool debug = false;  // adds PEAK_RUN_MS lines
};

// Errors: UnsupportedDtype when the backend has no type for an array dtype.
std::string generate_driver(const BackendDescriptor& backend, const context::KernelContext& ctx,
                            const spec::ExecutionParams& params, const DriverOptions& options);

struct CompileSources {
  std::string driver;
  std::string device;
  std::string host;
  std::string macros;
};

struct CompileResult {
  bool ok = false;
  fs::path artifact;
  std::string stderr_text;
  bool cached = false;
};

struct Job {
  context::KernelContext ctx;
  spec::ExecutionParams params;
  DriverOptions options;
};

struct BatchHooks {
  // Called while the device lease is held.
  std::function<void(std::size_t job)> on_run_start;
  std::function<void(std::size_t job)> on_run_end;
};

// Holds one of a backend's `device_slots` for its lifetime. Leases are
// process-wide, shared by every Runtime instance.
class DeviceLease {
 public:
  DeviceLease(const std::string& backend_id, int slots);
  ~DeviceLease();
  DeviceLease(const DeviceLease&) = delete;
  DeviceLease& operator=(const DeviceLease&) = delete;

 private:
  std::string id_;
};

class Runtime {
 public:
  // Artifacts are cached under `cache_dir`, keyed by a hash of all sources
  // and the compile command. An empty path selects a private temporary.
  explicit Runtime(BackendDescriptor backend, fs::path cache_dir = {});
  ~Runtime();
  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  const BackendDescriptor& backend() const noexcept { return backend_; }

  // Error("ToolchainMissing") when the compiler is not installed.
  CompileResult compile(const CompileSources& sources);
  // Error("ProtocolViolation") when a successful exit lacks the time line.
  RunResult run(const fs::path& artifact, bool capture, std::optional<std::chrono::milliseconds> timeout = {});

  // generate_driver + compile + run under a device lease.
  RunResult execute(const Job& job);
  // Compiles with up to `parallel_compile` workers, then runs with at most
  // device_slots concurrent executions. Result order matches job order.
  std::vector<RunResult> execute_batch(const std::vector<Job>& jobs, int parallel_compile,
                                       const BatchHooks& hooks = {});

 private:
  CompileSources sources_for(const Job& job) const;
  RunResult run_leased(const fs::path& artifact, bool capture, std::size_t index, const BatchHooks& hooks);

  BackendDescriptor backend_;
  fs::path cache_dir_;
  std::optional<fs::path> owned_cache_;
};

}  // namespace peak::backend
