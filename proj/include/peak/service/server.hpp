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
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "peak/service/session.hpp"

namespace peak::service {

enum class JobState { queued, running, done, failed };
std::string_view to_string(JobState s) noexcept;

struct Job {
  std::string id;
  std::string kind;  // transform | evaluate
  std::string target;
  nlohmann::json request;
  JobState state = JobState::queued;
  nlohmann::json result;  // null until done
  std::optional<std::string> result_link;
  std::optional<std::string> error_code;
  std::string error_message;
  std::chrono::system_clock::time_point finished_at;
  bool fetched = false;
};

nlohmann::json to_json(const Job& job);

// What a job's work function returns. A set error_code fails the job but
// keeps the result; thrown errors fail it without one.
struct JobOutput {
  nlohmann::json result;
  std::optional<std::string> result_link;
  std::optional<std::string> error_code;
  std::string error_message;
};

// Jobs run one at a time on a worker thread, in submission order. Every
// state change is appended to a JSON-lines journal. On start, jobs the
// journal leaves queued or running are marked failed ("Interrupted").
class JobRegistry {
 public:
  using Work = std::function<JobOutput()>;

  explicit JobRegistry(std::filesystem::path journal);
  ~JobRegistry();
  JobRegistry(const JobRegistry&) = delete;
  JobRegistry& operator=(const JobRegistry&) = delete;

  std::string submit(std::string kind, std::string target, nlohmann::json request, Work work);
  // Marks the job as fetched. Error("UnknownJob").
  Job get(const std::string& id);
  std::vector<Job> list() const;
  // Drops terminal jobs that were fetched at least once, or that finished
  // more than `retention` before `now`. Returns the number removed.
  std::size_t prune(std::chrono::system_clock::time_point now,
                    std::chrono::hours retention = std::chrono::hours(24));
  // Blocks until the queue is empty and the worker is idle.
  void drain();

 private:
  void worker();
  void journal(const Job& job);

  std::filesystem::path journal_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::map<std::string, Job> jobs_;
  std::deque<std::pair<std::string, Work>> queue_;
  std::uint64_t next_ = 1;
  bool busy_ = false;
  bool stop_ = false;
  std::thread thread_;
};

// HTTP status for an error code.
int http_status(std::string_view error_code) noexcept;

// The JSON API over one workflow root. Owns the root's writer lock.
class Server {
 public:
  explicit Server(SessionConfig config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  // Serves until stop(); bind() must have succeeded.
  void listen();
  // bind + listen on a background thread.
  int start(const std::string& host, int port);
  void stop();

  JobRegistry& jobs() noexcept { return *jobs_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::unique_ptr<Session> session_;
  std::unique_ptr<JobRegistry> jobs_;
  std::thread thread_;
};

}  // namespace peak::service
