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

#include "peak/service/server.hpp"

#include <fstream>

#include <fmt/core.h>
#include <httplib.h>

#include "peak/error.hpp"
#include "peak/util/fs.hpp"
#include "peak/util/text.hpp"

namespace peak::service {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(JobState s) noexcept {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "?";
}

namespace {

std::optional<JobState> parse_state(std::string_view s) {
  for (auto st : {JobState::queued, JobState::running, JobState::done, JobState::failed}) {
    if (to_string(st) == s) return st;
  }
  return std::nullopt;
}

bool terminal(JobState s) { return s == JobState::done || s == JobState::failed; }

std::int64_t to_ms(std::chrono::system_clock::time_point t) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}

}  // namespace

json to_json(const Job& job) {
  json j{{"id", job.id},
         {"kind", job.kind},
         {"target", job.target},
         {"state", to_string(job.state)},
         {"request", job.request},
         {"result", job.result},
         {"result_link", job.result_link ? json(*job.result_link) : json(nullptr)}};
  j["error"] = job.error_code ? json{{"code", *job.error_code}, {"message", job.error_message}} : json(nullptr);
  return j;
}

JobRegistry::JobRegistry(fs::path journal_path) : journal_(std::move(journal_path)) {
  fs::create_directories(journal_.parent_path());
  if (fs::exists(journal_)) {
    for (const auto& line : util::split_lines(util::read_file(journal_))) {
      if (util::trim(line).empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception&) {
        continue;  // a torn final line from a crash
      }
      Job job;
      job.id = j.value("id", "");
      const auto state = parse_state(j.value("state", ""));
      if (job.id.empty() || !state) continue;
      job.kind = j.value("kind", "");
      job.target = j.value("target", "");
      job.request = j.value("request", json(nullptr));
      job.state = *state;
      job.result = j.value("result", json(nullptr));
      if (j.contains("result_link") && j.at("result_link").is_string()) job.result_link = j.at("result_link");
      if (j.contains("error") && j.at("error").is_object()) {
        job.error_code = j.at("error").value("code", "");
        job.error_message = j.at("error").value("message", "");
      }
      job.finished_at = std::chrono::system_clock::time_point(std::chrono::milliseconds(j.value("at_ms", 0LL)));
      jobs_[job.id] = std::move(job);
      if (const auto n = std::strtoull(jobs_.rbegin()->first.c_str() + 4, nullptr, 10); n >= next_) next_ = n + 1;
    }
    for (auto& [id, job] : jobs_) {
      if (terminal(job.state)) continue;
      job.state = JobState::failed;
      job.error_code = "Interrupted";
      job.error_message = "the service stopped before the job finished";
      job.finished_at = std::chrono::system_clock::now();
      journal(job);
    }
  }
  thread_ = std::thread([this] { worker(); });
}

JobRegistry::~JobRegistry() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  thread_.join();
}

void JobRegistry::journal(const Job& job) {
  json j = to_json(job);
  j["at_ms"] = to_ms(job.finished_at.time_since_epoch().count() ? job.finished_at : std::chrono::system_clock::now());
  std::ofstream out(journal_, std::ios::app);
  out << j.dump() << '\n';
  out.flush();
}

std::string JobRegistry::submit(std::string kind, std::string target, json request, Work work) {
  std::string id;
  {
    std::lock_guard lock(mu_);
    id = fmt::format("job-{:06d}", next_++);
    Job job;
    job.id = id;
    job.kind = std::move(kind);
    job.target = std::move(target);
    job.request = std::move(request);
    journal(job);
    jobs_[id] = std::move(job);
    queue_.emplace_back(id, std::move(work));
  }
  cv_.notify_all();
  return id;
}

Job JobRegistry::get(const std::string& id) {
  std::lock_guard lock(mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) throw Error("UnknownJob", fmt::format("no job '{}'", id));
  Job copy = it->second;
  if (terminal(it->second.state)) it->second.fetched = true;
  return copy;
}

std::vector<Job> JobRegistry::list() const {
  std::lock_guard lock(mu_);
  std::vector<Job> out;
  for (const auto& [id, job] : jobs_) out.push_back(job);
  return out;
}

std::size_t JobRegistry::prune(std::chrono::system_clock::time_point now, std::chrono::hours retention) {
  std::lock_guard lock(mu_);
  return std::erase_if(jobs_, [&](const auto& kv) {
    const auto& job = kv.second;
    return terminal(job.state) && (job.fetched || now - job.finished_at > retention);
  });
}

void JobRegistry::drain() {
  std::unique_lock lock(mu_);
  idle_cv_.wait(lock, [this] { return queue_.empty() && !busy_; });
}

void JobRegistry::worker() {
  for (;;) {
    std::pair<std::string, Work> item;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return stop_ || !queue_.empty(); });
      if (stop_) return;
      item = std::move(queue_.front());
      queue_.pop_front();
      busy_ = true;
      auto& job = jobs_.at(item.first);
      job.state = JobState::running;
      journal(job);
    }
    JobOutput output;
    std::optional<std::pair<std::string, std::string>> error;
    try {
      output = item.second();
      if (output.error_code) error.emplace(*output.error_code, output.error_message);
    } catch (const Error& e) {
      error.emplace(e.code(), e.what());
    } catch (const std::exception& e) {
      error.emplace("InternalError", e.what());
    }
    {
      std::lock_guard lock(mu_);
      auto& job = jobs_.at(item.first);
      job.finished_at = std::chrono::system_clock::now();
      job.result = std::move(output.result);
      job.result_link = std::move(output.result_link);
      if (error) {
        job.state = JobState::failed;
        job.error_code = error->first;
        job.error_message = error->second;
      } else {
        job.state = JobState::done;
      }
      journal(job);
      busy_ = false;
    }
    idle_cv_.notify_all();
  }
}

int http_status(std::string_view code) noexcept {
  if (code == "UnknownCheckpoint" || code == "UnknownRef" || code == "UnknownJob" ||
      code == "UnknownTransformation" || code == "BadRegion" || code == "NotFound") {
    return 404;
  }
  if (code == "LockConflict" || code == "DigestCollisionConflict") return 409;
  if (code == "InternalError" || code == "IoError") return 500;
  return 422;
}

struct Server::Impl {
  httplib::Server http;
  std::mutex refs_mu;
};

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const std::string& code, const std::string& message) {
  send_json(res, http_status(code), {{"code", code}, {"message", message}});
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

httplib::Server::Handler guarded(Handler h) {
  return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
    try {
      h(req, res);
    } catch (const Error& e) {
      send_error(res, e.code(), e.what());
    } catch (const json::exception& e) {
      send_error(res, "InvalidBody", e.what());
    } catch (const std::exception& e) {
      send_error(res, "InternalError", e.what());
    }
  };
}

json parse_body(const httplib::Request& req) {
  try {
    auto j = json::parse(req.body);
    if (!j.is_object()) throw Error("InvalidBody", "the request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw Error("InvalidBody", e.what());
  }
}

std::string query(const httplib::Request& req, const char* name, bool required = true) {
  if (!req.has_param(name)) {
    if (required) throw Error("InvalidQuery", fmt::format("missing query parameter '{}'", name));
    return {};
  }
  return req.get_param_value(name);
}

json checkpoint_detail(const store::Store& s, const std::string& id) {
  const auto c = s.get(id);
  json j = store::to_json(c);
  j["validation_report"] = c.validation ? validation::to_json(*c.validation) : json(nullptr);
  j["perf_reports"] = json::array();
  for (const auto& r : c.perf) j["perf_reports"].push_back(perf::to_json(r));
  j["lineage"] = s.lineage(id);
  j["children"] = s.children(id);
  json names = json::array();
  for (const auto& [name, target] : s.refs()) {
    if (target == id) names.push_back(name);
  }
  j["refs"] = names;
  const auto ctx = s.restore(id);
  j["backend"] = ctx.backend;
  j["kernel_name"] = ctx.kernel_name;
  j["label"] = ctx.label;
  return j;
}

}  // namespace

Server::Server(SessionConfig config)
    : impl_(std::make_unique<Impl>()), session_(std::make_unique<Session>(std::move(config))) {
  const auto root = session_->config().workflow_root;
  jobs_ = std::make_unique<JobRegistry>(root / "jobs" / "journal.jsonl");
  auto& http = impl_->http;
  Session& session = *session_;
  JobRegistry& jobs = *jobs_;

  http.Get("/api/checkpoints", guarded([&](const httplib::Request&, httplib::Response& res) {
             const auto& s = session.store();
             json nodes = json::array();
             json roots = json::array();
             std::map<std::string, json> children;
             const auto all = s.list();
             for (const auto& c : all) {
               if (c.parent) children[*c.parent].push_back(c.id);
               else roots.push_back(c.id);
             }
             for (const auto& c : all) {
               json j = store::to_json(c);
               j["children"] = children.count(c.id) ? children[c.id] : json::array();
               nodes.push_back(j);
             }
             send_json(res, 200, {{"checkpoints", nodes}, {"roots", roots}, {"refs", s.refs()}});
           }));

  http.Get(R"(/api/checkpoints/([^/]+))", guarded([&](const httplib::Request& req, httplib::Response& res) {
             const auto& s = session.store();
             send_json(res, 200, checkpoint_detail(s, s.resolve(req.matches[1])));
           }));

  http.Get(R"(/api/checkpoints/([^/]+)/region/([^/]+))",
           guarded([&](const httplib::Request& req, httplib::Response& res) {
             const auto& s = session.store();
             const auto id = s.resolve(req.matches[1]);
             const auto kind = context::parse_region(std::string(req.matches[2]));
             send_json(res, 200, {{"id", id}, {"kind", context::to_string(kind)}, {"text", s.restore(id).region(kind)}});
           }));

  http.Get("/api/diff", guarded([&](const httplib::Request& req, httplib::Response& res) {
             const auto& s = session.store();
             const auto a = s.resolve(query(req, "a"));
             const auto b = s.resolve(query(req, "b"));
             json j = store::to_json(s.diff(a, b));
             j["a"] = a;
             j["b"] = b;
             send_json(res, 200, j);
           }));

  http.Get("/api/trajectory", guarded([&](const httplib::Request& req, httplib::Response& res) {
             const auto& s = session.store();
             const auto tip = s.resolve(query(req, "tip"));
             std::optional<double> reference;
             if (const auto text = query(req, "reference_ms", false); !text.empty()) {
               try {
                 std::size_t used = 0;
                 reference = std::stod(text, &used);
                 if (used != text.size()) throw std::invalid_argument(text);
               } catch (const std::exception&) {
                 throw Error("InvalidQuery", fmt::format("reference_ms '{}' is not a number", text));
               }
             }
             std::optional<std::string> key;
             if (const auto sel = query(req, "input_key", false); !sel.empty()) {
               key = perf::select_input_key(s.restore(tip).spec, sel).canonical();
             }
             send_json(res, 200, store::to_json(s.trajectory(tip, reference, key)));
           }));

  http.Get("/api/transformations", guarded([&](const httplib::Request&, httplib::Response& res) {
             const auto& c = session.config();
             send_json(res, 200, {{"backend", c.backend}, {"transformations", catalog_json(c.catalog_dir(), c.backend)}});
           }));

  http.Post(R"(/api/checkpoints/([^/]+)/transform)",
            guarded([&](const httplib::Request& req, httplib::Response& res) {
              const auto body = parse_body(req);
              if (!body.contains("name") || !body.at("name").is_string()) {
                throw Error("InvalidBody", "field 'name' (string) is required");
              }
              const std::string name = body.at("name");
              const std::string note = body.value("note", "");
              const auto id = session.store().resolve(req.matches[1]);
              session.transformation(name);
              const auto job = jobs.submit("transform", id, body, [&session, id, name, note]() {
                auto r = session.transform(id, name, note);
                if (!r.checkpoint) {
                  return JobOutput{to_json(r), std::nullopt, "TransformFailed",
                                   fmt::format("{} ended with {}", name, transform::to_string(r.outcome.status))};
                }
                return JobOutput{to_json(r), "/api/checkpoints/" + r.checkpoint->id, {}, {}};
              });
              send_json(res, 202, {{"job_id", job}, {"state", "queued"}, {"link", "/api/jobs/" + job}});
            }));

  http.Post(R"(/api/checkpoints/([^/]+)/evaluate)",
            guarded([&](const httplib::Request& req, httplib::Response& res) {
              const auto body = parse_body(req);
              const auto request = evaluate_request_from_json(body);
              const auto id = session.store().resolve(req.matches[1]);
              perf::select_input_key(session.store().restore(id).spec, request.input_key);
              const auto job = jobs.submit("evaluate", id, body, [&session, id, request]() {
                const auto report = session.evaluate(id, request);
                return JobOutput{perf::to_json(report), "/api/checkpoints/" + id, {}, {}};
              });
              send_json(res, 202, {{"job_id", job}, {"state", "queued"}, {"link", "/api/jobs/" + job}});
            }));

  http.Get(R"(/api/jobs/([^/]+))", guarded([&](const httplib::Request& req, httplib::Response& res) {
             send_json(res, 200, to_json(jobs.get(req.matches[1])));
           }));

  http.Get("/api/jobs", guarded([&](const httplib::Request&, httplib::Response& res) {
             json out = json::array();
             for (const auto& j : jobs.list()) out.push_back({{"id", j.id}, {"kind", j.kind}, {"state", to_string(j.state)}});
             send_json(res, 200, {{"jobs", out}});
           }));

  http.Post("/api/refs", guarded([&](const httplib::Request& req, httplib::Response& res) {
              const auto body = parse_body(req);
              if (!body.contains("name") || !body.at("name").is_string() || !body.contains("id") ||
                  !body.at("id").is_string()) {
                throw Error("InvalidBody", "fields 'name' and 'id' (strings) are required");
              }
              std::lock_guard lock(impl_->refs_mu);
              const auto id = session.store().resolve(body.at("id"));
              session.store().set_ref(body.at("name"), id);
              send_json(res, 200, {{"name", body.at("name")}, {"id", id}});
            }));

  http.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (res.body.empty() && res.status == 404) {
      send_error(res, "NotFound", fmt::format("no route for {} {}", req.method, req.path));
    }
  });
}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->http.bind_to_any_port(host);
    if (bound < 0) throw Error("IoError", fmt::format("cannot bind {}", host));
    return bound;
  }
  if (!impl_->http.bind_to_port(host, port)) throw Error("IoError", fmt::format("cannot bind {}:{}", host, port));
  return port;
}

void Server::listen() { impl_->http.listen_after_bind(); }

int Server::start(const std::string& host, int port) {
  const int bound = bind(host, port);
  thread_ = std::thread([this] { listen(); });
  impl_->http.wait_until_ready();
  return bound;
}

void Server::stop() {
  impl_->http.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace peak::service
