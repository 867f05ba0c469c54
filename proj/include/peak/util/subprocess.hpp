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

#include <sys/types.h>

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace peak::util {

struct ProcessOptions {
  std::optional<std::chrono::milliseconds> timeout;
  std::optional<std::string> stdin_data;
  std::filesystem::path cwd;
};

struct ProcessResult {
  int exit_code = -1;    // valid when the process exited normally
  int term_signal = 0;   // nonzero when killed by a signal
  bool timed_out = false;
  std::string out;
  std::string err;

  bool ok() const noexcept { return !timed_out && term_signal == 0 && exit_code == 0; }
};

// Searches PATH (or checks the path directly when it contains '/').
std::optional<std::filesystem::path> find_executable(const std::string& name);

// Runs argv[0] with the given arguments, capturing stdout and stderr. The
// child gets its own process group, which is killed on timeout.
ProcessResult run_process(const std::vector<std::string>& argv, const ProcessOptions& options = {});

// A child process driven line by line over stdin/stdout.
class InteractiveProcess {
 public:
  explicit InteractiveProcess(const std::vector<std::string>& argv);
  ~InteractiveProcess();
  InteractiveProcess(const InteractiveProcess&) = delete;
  InteractiveProcess& operator=(const InteractiveProcess&) = delete;

  void write(const std::string& data);
  void close_stdin();
  // nullopt on EOF or timeout.
  std::optional<std::string> read_line(std::chrono::milliseconds timeout);
  // Waits for exit (killing after `grace`); returns the exit code or -signal.
  int wait(std::chrono::milliseconds grace = std::chrono::milliseconds(2000));
  std::string drain_stderr();

 private:
  pid_t pid_ = -1;
  int in_fd_ = -1;
  int out_fd_ = -1;
  int err_fd_ = -1;
  std::string buffer_;
  bool reaped_ = false;
  int status_ = 0;
};

}  // namespace peak::util
