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

#include "peak/util/subprocess.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>

#include <fmt/core.h>

#include "peak/error.hpp"

extern char** environ;

namespace peak::util {

namespace {

using Clock = std::chrono::steady_clock;

struct Pipe {
  int read = -1;
  int write = -1;
};

Pipe make_pipe() {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) {
    throw Error("ProcessError", fmt::format("pipe2 failed: {}", std::strerror(errno)));
  }
  return {fds[0], fds[1]};
}

void close_fd(int& fd) {
  if (fd >= 0) {
    ::close(fd);
    fd = -1;
  }
}

pid_t spawn(const std::vector<std::string>& argv, const std::filesystem::path& cwd, int in_fd,
            int out_fd, int err_fd) {
  if (argv.empty()) throw Error("ProcessError", "empty argv");
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_fd, STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_fd, STDOUT_FILENO);
  posix_spawn_file_actions_adddup2(&actions, err_fd, STDERR_FILENO);
  if (!cwd.empty()) posix_spawn_file_actions_addchdir_np(&actions, cwd.c_str());

  posix_spawnattr_t attr;
  posix_spawnattr_init(&attr);
  posix_spawnattr_setpgroup(&attr, 0);
  sigset_t defaults;
  sigemptyset(&defaults);
  sigaddset(&defaults, SIGPIPE);
  posix_spawnattr_setsigdefault(&attr, &defaults);
  posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP | POSIX_SPAWN_SETSIGDEF);

  std::vector<char*> cargv;
  cargv.reserve(argv.size() + 1);
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);

  pid_t pid = -1;
  const int rc = posix_spawnp(&pid, cargv[0], &actions, &attr, cargv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  posix_spawnattr_destroy(&attr);
  if (rc != 0) {
    throw Error("ProcessError", fmt::format("cannot spawn '{}': {}", argv[0], std::strerror(rc)));
  }
  return pid;
}

void ignore_sigpipe_once() {
  static const bool done = [] {
    ::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)done;
}

}  // namespace

std::optional<std::filesystem::path> find_executable(const std::string& name) {
  if (name.empty()) return std::nullopt;
  if (name.find('/') != std::string::npos) {
    if (::access(name.c_str(), X_OK) == 0) return std::filesystem::path(name);
    return std::nullopt;
  }
  const char* path_env = std::getenv("PATH");
  std::string_view paths = path_env ? path_env : "/usr/local/bin:/usr/bin:/bin";
  std::size_t start = 0;
  while (start <= paths.size()) {
    auto end = paths.find(':', start);
    if (end == std::string_view::npos) end = paths.size();
    std::filesystem::path dir(std::string(paths.substr(start, end - start)));
    if (dir.empty()) dir = ".";
    auto candidate = dir / name;
    if (::access(candidate.c_str(), X_OK) == 0 && !std::filesystem::is_directory(candidate)) {
      return candidate;
    }
    start = end + 1;
  }
  return std::nullopt;
}

ProcessResult run_process(const std::vector<std::string>& argv, const ProcessOptions& options) {
  ignore_sigpipe_once();
  Pipe in = make_pipe();
  Pipe out = make_pipe();
  Pipe err = make_pipe();

  pid_t pid;
  try {
    pid = spawn(argv, options.cwd, in.read, out.write, err.write);
  } catch (...) {
    for (int* fd : {&in.read, &in.write, &out.read, &out.write, &err.read, &err.write}) close_fd(*fd);
    throw;
  }
  close_fd(in.read);
  close_fd(out.write);
  close_fd(err.write);

  std::string_view pending_in;
  if (options.stdin_data) pending_in = *options.stdin_data;
  if (pending_in.empty()) close_fd(in.write);
  if (in.write >= 0) ::fcntl(in.write, F_SETFL, O_NONBLOCK);

  ProcessResult result;
  const auto deadline = options.timeout ? std::optional(Clock::now() + *options.timeout) : std::nullopt;
  char buf[65536];

  while (out.read >= 0 || err.read >= 0) {
    std::vector<pollfd> fds;
    if (out.read >= 0) fds.push_back({out.read, POLLIN, 0});
    if (err.read >= 0) fds.push_back({err.read, POLLIN, 0});
    if (in.write >= 0) fds.push_back({in.write, POLLOUT, 0});

    int wait_ms = -1;
    if (deadline) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(*deadline - Clock::now());
      if (left.count() <= 0) {
        result.timed_out = true;
        break;
      }
      wait_ms = static_cast<int>(std::min<long long>(left.count(), 1000));
    }
    const int n = ::poll(fds.data(), fds.size(), wait_ms);
    if (n < 0) {
      if (errno == EINTR) continue;
      break;
    }
    for (const auto& p : fds) {
      if (p.revents == 0) continue;
      if (p.fd == in.write) {
        const auto w = ::write(in.write, pending_in.data(), pending_in.size());
        if (w > 0) pending_in.remove_prefix(static_cast<std::size_t>(w));
        if (w < 0 && errno != EAGAIN) pending_in = {};
        if (pending_in.empty()) close_fd(in.write);
        continue;
      }
      const auto r = ::read(p.fd, buf, sizeof buf);
      if (r > 0) {
        (p.fd == out.read ? result.out : result.err).append(buf, static_cast<std::size_t>(r));
      } else if (r == 0 || (errno != EINTR && errno != EAGAIN)) {
        if (p.fd == out.read) close_fd(out.read);
        else close_fd(err.read);
      }
    }
  }

  if (result.timed_out) ::kill(-pid, SIGKILL);
  close_fd(in.write);
  close_fd(out.read);
  close_fd(err.read);

  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (result.timed_out) {
    result.term_signal = SIGKILL;
  } else if (WIFEXITED(status)) {
    result.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    result.term_signal = WTERMSIG(status);
  }
  return result;
}

InteractiveProcess::InteractiveProcess(const std::vector<std::string>& argv) {
  ignore_sigpipe_once();
  Pipe in = make_pipe();
  Pipe out = make_pipe();
  Pipe err = make_pipe();
  try {
    pid_ = spawn(argv, {}, in.read, out.write, err.write);
  } catch (...) {
    for (int* fd : {&in.read, &in.write, &out.read, &out.write, &err.read, &err.write}) close_fd(*fd);
    throw;
  }
  close_fd(in.read);
  close_fd(out.write);
  close_fd(err.write);
  in_fd_ = in.write;
  out_fd_ = out.read;
  err_fd_ = err.read;
  ::fcntl(err_fd_, F_SETFL, O_NONBLOCK);
}

InteractiveProcess::~InteractiveProcess() {
  close_fd(in_fd_);
  close_fd(out_fd_);
  if (!reaped_ && pid_ > 0) {
    ::kill(-pid_, SIGKILL);
    int status;
    ::waitpid(pid_, &status, 0);
  }
  close_fd(err_fd_);
}

void InteractiveProcess::write(const std::string& data) {
  std::string_view rest = data;
  while (!rest.empty() && in_fd_ >= 0) {
    const auto w = ::write(in_fd_, rest.data(), rest.size());
    if (w < 0) {
      if (errno == EINTR) continue;
      throw Error("ProcessError", fmt::format("write to child failed: {}", std::strerror(errno)));
    }
    rest.remove_prefix(static_cast<std::size_t>(w));
  }
}

void InteractiveProcess::close_stdin() { close_fd(in_fd_); }

std::optional<std::string> InteractiveProcess::read_line(std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  while (true) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    if (out_fd_ < 0) return std::nullopt;
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    if (left.count() <= 0) return std::nullopt;
    pollfd p{out_fd_, POLLIN, 0};
    const int n = ::poll(&p, 1, static_cast<int>(left.count()));
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return std::nullopt;
    char buf[4096];
    const auto r = ::read(out_fd_, buf, sizeof buf);
    if (r <= 0) {
      close_fd(out_fd_);
      if (!buffer_.empty()) {
        std::string line = std::move(buffer_);
        buffer_.clear();
        return line;
      }
      return std::nullopt;
    }
    buffer_.append(buf, static_cast<std::size_t>(r));
  }
}

int InteractiveProcess::wait(std::chrono::milliseconds grace) {
  close_fd(in_fd_);
  if (reaped_) return status_;
  const auto deadline = Clock::now() + grace;
  int status = 0;
  while (true) {
    const pid_t r = ::waitpid(pid_, &status, WNOHANG);
    if (r == pid_) break;
    if (Clock::now() >= deadline) {
      ::kill(-pid_, SIGKILL);
      ::waitpid(pid_, &status, 0);
      break;
    }
    ::usleep(5000);
  }
  reaped_ = true;
  status_ = WIFEXITED(status) ? WEXITSTATUS(status) : -WTERMSIG(status);
  return status_;
}

std::string InteractiveProcess::drain_stderr() {
  std::string s;
  if (err_fd_ < 0) return s;
  char buf[4096];
  while (true) {
    const auto r = ::read(err_fd_, buf, sizeof buf);
    if (r <= 0) break;
    s.append(buf, static_cast<std::size_t>(r));
  }
  return s;
}

}  // namespace peak::util
