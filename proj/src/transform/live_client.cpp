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

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <mutex>

#include <httplib.h>

#include <fmt/format.h>

#include "peak/error.hpp"
#include "peak/transform/transform.hpp"
#include "peak/util/fs.hpp"

namespace peak::transform {

namespace {

using nlohmann::json;

class InflightLimiter {
 public:
  void acquire(int limit) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return active_ < std::max(1, limit); });
    ++active_;
  }
  void release() {
    {
      std::lock_guard lock(mu_);
      --active_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int active_ = 0;
};

InflightLimiter& limiter() {
  static InflightLimiter l;
  return l;
}

std::string env_or(const char* name, std::string fallback = {}) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

// "https://host:port/prefix" -> ("https://host:port", "/prefix")
std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error("ConfigError", "PEAK_LLM_URL must include a scheme: " + url);
  const auto path = url.find('/', scheme + 3);
  if (path == std::string::npos) return {url, ""};
  auto prefix = url.substr(path);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, path), prefix};
}

std::string redact(std::string text, const std::string& token) {
  if (token.empty()) return text;
  for (auto pos = text.find(token); pos != std::string::npos; pos = text.find(token, pos)) {
    text.replace(pos, token.size(), "[REDACTED]");
  }
  return text;
}

}  // namespace

LiveClientConfig LiveClientConfig::from_env() {
  LiveClientConfig c;
  c.base_url = env_or("PEAK_LLM_URL");
  c.model = env_or("PEAK_LLM_MODEL");
  c.token = env_or("PEAK_LLM_TOKEN");
  if (c.base_url.empty() || c.model.empty()) {
    throw Error("ConfigError", "PEAK_LLM_URL and PEAK_LLM_MODEL must be set for the live client");
  }
  const auto inflight = env_or("PEAK_LLM_INFLIGHT", "4");
  try {
    c.inflight = std::stoi(inflight);
  } catch (const std::exception&) {
    throw Error("ConfigError", "PEAK_LLM_INFLIGHT is not an integer: " + inflight);
  }
  if (c.inflight < 1) throw Error("ConfigError", "PEAK_LLM_INFLIGHT must be >= 1");
  return c;
}

LiveClient::LiveClient(LiveClientConfig config) : config_(std::move(config)) {}

LlmResponse LiveClient::complete(const LlmRequest& request) {
  const auto [origin, prefix] = split_url(config_.base_url);
  json body{{"model", config_.model},
            {"messages", json::array({{{"role", "system"}, {"content", request.system}},
                                      {{"role", "user"}, {"content", request.user}}})}};

  httplib::Client cli(origin);
  cli.set_connection_timeout(std::chrono::seconds(30));
  cli.set_read_timeout(config_.timeout);
  cli.set_write_timeout(config_.timeout);
  httplib::Headers headers;
  if (!config_.token.empty()) headers.emplace("Authorization", "Bearer " + config_.token);

  limiter().acquire(config_.inflight);
  auto res = cli.Post(prefix + "/chat/completions", headers, body.dump(), "application/json");
  limiter().release();

  json audit{{"key",
              {{"transformation", request.key.transformation},
               {"pass", request.key.pass},
               {"call", request.key.call},
               {"attempt", request.key.attempt},
               {"region", context::to_string(request.key.region)},
               {"region_hash", request.key.region_hash}}},
             {"url", config_.base_url},
             {"authorization", config_.token.empty() ? "" : "Bearer [REDACTED]"},
             {"request", body}};

  std::string error;
  std::string content;
  if (!res) {
    error = "request failed: " + httplib::to_string(res.error());
  } else if (res->status != 200) {
    error = fmt::format("HTTP {}: {}", res->status, res->body.substr(0, 500));
  } else {
    try {
      content = json::parse(res->body).at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      error = std::string("malformed completion: ") + e.what();
    }
  }
  if (res) audit["status"] = res->status;
  if (error.empty()) {
    audit["response"] = content;
  } else {
    audit["error"] = error;
  }
  if (!config_.audit_dir.empty()) {
    const auto stamp = std::chrono::duration_cast<std::chrono::microseconds>(
                           std::chrono::system_clock::now().time_since_epoch())
                           .count();
    util::write_file_atomic(config_.audit_dir / fmt::format("{}-p{}c{}a{}-{}.json", request.key.transformation,
                                                            request.key.pass, request.key.call,
                                                            request.key.attempt, stamp),
                            redact(audit.dump(2), config_.token));
  }
  if (!error.empty()) throw Error("LlmError", redact(error, config_.token));
  return {content};
}

}  // namespace peak::transform
