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

#include "peak/store/store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <regex>

#include <fmt/chrono.h>
#include <fmt/core.h>

#include "peak/error.hpp"
#include "peak/spec/printer.hpp"
#include "peak/util/diff.hpp"
#include "peak/util/fs.hpp"
#include "peak/util/text.hpp"

namespace peak::store {

using nlohmann::json;

namespace {

constexpr const char* kContextFile = "context.bin";
constexpr const char* kMetaFile = "meta.json";
constexpr const char* kValidationFile = "validation.json";
constexpr const char* kPerfFile = "perf.json";

std::string now_iso8601() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(t));
}

bool is_hex_id(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
  });
}

json opt(const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); }
json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<std::string> opt_string(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(util::read_file(path));
  } catch (const json::exception& e) {
    throw Error("CorruptCheckpoint", fmt::format("'{}': {}", path.string(), e.what()));
  }
}

json perf_summary(const perf::PerfReport& r) {
  json best = json::object();
  for (const auto& [name, value] : r.best.tuning) best[name] = value;
  return {{"input_key", r.input_key.canonical()},
          {"strategy", r.strategy},
          {"best_time_ms", r.best.mean_time_ms},
          {"best_tuning", best},
          {"best_gflops", opt(r.best_gflops)},
          {"attempted", r.attempted},
          {"evaluated", r.evaluated},
          {"survivors", r.top_k.size()}};
}

}  // namespace

const perf::PerfReport* Checkpoint::perf_for(const spec::InputKey& key) const {
  const auto canonical = key.canonical();
  for (const auto& r : perf) {
    if (r.input_key.canonical() == canonical) return &r;
  }
  return nullptr;
}

json to_json(const Checkpoint& c) {
  json j{{"id", c.id},
         {"parent", opt(c.parent)},
         {"transformation", opt(c.transformation_name)},
         {"created_at", c.created_at},
         {"note", c.note},
         {"seq", c.seq}};
  if (c.validation) {
    j["validation"] = {{"pass", c.validation->pass},
                       {"sampled", c.validation->sampled},
                       {"reason", c.validation->reason},
                       {"findings", c.validation->findings.size()}};
  } else {
    j["validation"] = nullptr;
  }
  j["perf"] = json::array();
  for (const auto& r : c.perf) j["perf"].push_back(perf_summary(r));
  return j;
}

bool StoreDiff::empty() const {
  return spec.empty() && meta.empty() &&
         std::all_of(regions.begin(), regions.end(), [](const auto& kv) { return kv.second.empty(); });
}

json to_json(const StoreDiff& d) {
  json regions = json::object();
  for (const auto& [kind, text] : d.regions) regions[std::string(context::to_string(kind))] = text;
  return {{"regions", regions},
          {"spec", d.spec},
          {"meta", d.meta},
          {"empty", d.empty()},
          {"delta",
           {{"input_key", opt(d.delta.input_key)},
            {"a_best_ms", opt(d.delta.a_best_ms)},
            {"b_best_ms", opt(d.delta.b_best_ms)},
            {"a_gflops", opt(d.delta.a_gflops)},
            {"b_gflops", opt(d.delta.b_gflops)},
            {"step_speedup", opt(d.delta.step_speedup)}}}};
}

json to_json(const Trajectory& t) {
  json steps = json::array();
  for (const auto& s : t.steps) {
    steps.push_back({{"id", s.id},
                     {"transformation", opt(s.transformation_name)},
                     {"best_time_ms", s.best_time_ms},
                     {"cumulative_speedup", s.cumulative_speedup},
                     {"step_speedup", s.step_speedup},
                     {"best_gflops", opt(s.best_gflops)},
                     {"percent_of_reference", opt(s.percent_of_reference)}});
  }
  return {{"input_key", t.input_key}, {"steps", steps}};
}

Store::Store(fs::path root, int lock_fd) : root_(std::move(root)), lock_fd_(lock_fd) {}

Store::Store(Store&& other) noexcept : root_(std::move(other.root_)), lock_fd_(other.lock_fd_) {
  other.lock_fd_ = -1;
}

Store& Store::operator=(Store&& other) noexcept {
  if (this != &other) {
    if (lock_fd_ >= 0) ::close(lock_fd_);
    root_ = std::move(other.root_);
    lock_fd_ = other.lock_fd_;
    other.lock_fd_ = -1;
  }
  return *this;
}

Store::~Store() {
  if (lock_fd_ >= 0) ::close(lock_fd_);
}

Store Store::open(const fs::path& root, Mode mode) {
  if (mode == Mode::read) {
    if (!fs::is_directory(root / "checkpoints")) {
      throw Error("NotAStore", fmt::format("'{}' is not a workflow root", root.string()));
    }
    return Store(root, -1);
  }
  fs::create_directories(root / "checkpoints");
  fs::create_directories(root / "references");
  fs::create_directories(root / "tmp");
  const fs::path lock = root / "LOCK";
  const int fd = ::open(lock.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw Error("IoError", fmt::format("cannot open '{}'", lock.string()));
  if (::flock(fd, LOCK_EX | LOCK_NB) != 0) {
    const int err = errno;
    ::close(fd);
    if (err == EWOULDBLOCK) {
      const std::string holder(util::trim(util::read_file(lock)));
      throw Error("LockConflict", fmt::format("workflow root '{}' is locked by another writer{}", root.string(),
                                              holder.empty() ? "" : " (pid " + holder + ")"));
    }
    throw Error("IoError", fmt::format("cannot lock '{}'", lock.string()));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  if (::ftruncate(fd, 0) != 0 || ::pwrite(fd, pid.data(), pid.size(), 0) < 0) {
    ::close(fd);
    throw Error("IoError", fmt::format("cannot write '{}'", lock.string()));
  }
  // Leftovers of interrupted commits are never visible; clear them.
  for (const auto& entry : fs::directory_iterator(root / "tmp")) fs::remove_all(entry.path());
  return Store(root, fd);
}

fs::path Store::dir_of(const std::string& id) const { return root_ / "checkpoints" / id; }

void Store::require_writable() const {
  if (!writable()) throw Error("ReadOnlyStore", fmt::format("'{}' was opened read-only", root_.string()));
}

bool Store::contains(const std::string& id) const {
  return is_hex_id(id) && fs::is_regular_file(dir_of(id) / kMetaFile);
}

Checkpoint Store::get(const std::string& id) const {
  if (!contains(id)) throw Error("UnknownCheckpoint", fmt::format("no checkpoint '{}'", id));
  const auto dir = dir_of(id);
  const json meta = read_json(dir / kMetaFile);
  Checkpoint c;
  try {
    c.id = meta.at("id").get<std::string>();
    c.parent = opt_string(meta, "parent");
    c.transformation_name = opt_string(meta, "transformation");
    c.created_at = meta.at("created_at").get<std::string>();
    c.note = meta.value("note", "");
    c.seq = meta.at("seq").get<std::uint64_t>();
    if (fs::exists(dir / kValidationFile)) {
      c.validation = validation::report_from_json(read_json(dir / kValidationFile));
    }
    if (fs::exists(dir / kPerfFile)) {
      for (const auto& r : read_json(dir / kPerfFile)) c.perf.push_back(perf::report_from_json(r));
    }
  } catch (const json::exception& e) {
    throw Error("CorruptCheckpoint", fmt::format("checkpoint '{}': {}", id, e.what()));
  }
  if (c.id != id) throw Error("CorruptCheckpoint", fmt::format("checkpoint '{}' records id '{}'", id, c.id));
  return c;
}

std::string Store::canonical_bytes(const std::string& id) const {
  if (!contains(id)) throw Error("UnknownCheckpoint", fmt::format("no checkpoint '{}'", id));
  return util::read_file(dir_of(id) / kContextFile);
}

context::KernelContext Store::restore(const std::string& id) const {
  auto ctx = context::canonical_deserialize(canonical_bytes(id));
  if (context::digest(ctx).hash != id) {
    throw Error("CorruptCheckpoint", fmt::format("checkpoint '{}' does not match its digest", id));
  }
  return ctx;
}

std::vector<Checkpoint> Store::list() const {
  std::vector<Checkpoint> out;
  if (!fs::is_directory(root_ / "checkpoints")) return out;
  for (const auto& entry : fs::directory_iterator(root_ / "checkpoints")) {
    const auto id = entry.path().filename().string();
    if (contains(id)) out.push_back(get(id));
  }
  std::sort(out.begin(), out.end(), [](const Checkpoint& a, const Checkpoint& b) { return a.seq < b.seq; });
  return out;
}

std::vector<std::string> Store::children(const std::string& id) const {
  std::vector<std::string> out;
  for (const auto& c : list()) {
    if (c.parent == id) out.push_back(c.id);
  }
  return out;
}

std::vector<std::string> Store::lineage(const std::string& id) const {
  std::vector<std::string> path;
  std::optional<std::string> cur = id;
  while (cur) {
    if (std::find(path.begin(), path.end(), *cur) != path.end()) {
      throw Error("LineageCycle", fmt::format("checkpoint '{}' is its own ancestor", *cur));
    }
    path.push_back(*cur);
    cur = get(*cur).parent;
  }
  std::reverse(path.begin(), path.end());
  return path;
}

Checkpoint Store::commit(const context::KernelContext& ctx, const CommitRequest& request) {
  require_writable();
  const std::string id = context::digest(ctx).hash;
  const std::string bytes = context::canonical_serialize(ctx);
  if (request.parent && !contains(*request.parent)) {
    throw Error("UnknownParent", fmt::format("parent '{}' is not in the store", *request.parent));
  }
  if (contains(id)) {
    auto existing = get(id);
    if (existing.parent == request.parent && canonical_bytes(id) == bytes) return existing;
    throw Error("DigestCollisionConflict",
                fmt::format("context '{}' is already committed under parent '{}'", id.substr(0, 12),
                            existing.parent ? existing.parent->substr(0, 12) : "none"));
  }
  if (request.parent) {
    const auto ancestors = lineage(*request.parent);
    if (std::find(ancestors.begin(), ancestors.end(), id) != ancestors.end()) {
      throw Error("LineageCycle", fmt::format("'{}' is an ancestor of its parent", id));
    }
  }

  Checkpoint c;
  c.id = id;
  c.parent = request.parent;
  c.transformation_name = request.transformation_name;
  c.created_at = now_iso8601();
  c.note = request.note;
  c.seq = static_cast<std::uint64_t>(
      std::distance(fs::directory_iterator(root_ / "checkpoints"), fs::directory_iterator{}));
  c.validation = request.validation;
  if (request.perf) c.perf.push_back(*request.perf);

  const fs::path staging = util::make_unique_dir(root_ / "tmp", "commit");
  try {
    util::write_file_atomic(staging / kContextFile, bytes);
    context::save_bundle(ctx, staging / "bundle");
    if (c.validation) util::write_file(staging / kValidationFile, validation::to_json(*c.validation).dump(2));
    json perf = json::array();
    for (const auto& r : c.perf) perf.push_back(perf::to_json(r));
    util::write_file(staging / kPerfFile, perf.dump(2));
    json meta{{"id", c.id},
              {"parent", opt(c.parent)},
              {"transformation", opt(c.transformation_name)},
              {"created_at", c.created_at},
              {"note", c.note},
              {"seq", c.seq}};
    util::write_file_atomic(staging / kMetaFile, meta.dump(2));
    fs::rename(staging, dir_of(id));
  } catch (...) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    throw;
  }
  return c;
}

void Store::write_perf(const std::string& id, const std::vector<perf::PerfReport>& reports) {
  json perf = json::array();
  for (const auto& r : reports) perf.push_back(perf::to_json(r));
  util::write_file_atomic(dir_of(id) / kPerfFile, perf.dump(2));
}

void Store::attach_perf(const std::string& id, const perf::PerfReport& report) {
  require_writable();
  auto c = get(id);
  const auto key = report.input_key.canonical();
  std::erase_if(c.perf, [&](const perf::PerfReport& r) { return r.input_key.canonical() == key; });
  c.perf.push_back(report);
  write_perf(id, c.perf);
}

std::string Store::resolve(const std::string& text) const {
  const auto r = refs();
  if (auto it = r.find(text); it != r.end()) return it->second;
  if (contains(text)) return text;
  if (text.size() >= 4 && is_hex_id(text) && fs::is_directory(root_ / "checkpoints")) {
    std::vector<std::string> matches;
    for (const auto& entry : fs::directory_iterator(root_ / "checkpoints")) {
      const auto id = entry.path().filename().string();
      if (id.rfind(text, 0) == 0 && contains(id)) matches.push_back(id);
    }
    if (matches.size() == 1) return matches.front();
    if (matches.size() > 1) {
      throw Error("AmbiguousId", fmt::format("'{}' matches {} checkpoints", text, matches.size()));
    }
  }
  throw Error("UnknownCheckpoint", fmt::format("no checkpoint or ref '{}'", text));
}

std::map<std::string, std::string> Store::refs() const {
  const fs::path path = root_ / "refs.json";
  if (!fs::exists(path)) return {};
  try {
    return read_json(path).get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw Error("CorruptCheckpoint", fmt::format("'{}': {}", path.string(), e.what()));
  }
}

void Store::set_ref(const std::string& name, const std::string& id) {
  require_writable();
  static const std::regex kName("[A-Za-z0-9][A-Za-z0-9._-]*");
  if (!std::regex_match(name, kName) || is_hex_id(name)) {
    throw Error("BadRefName", fmt::format("'{}' is not a valid ref name", name));
  }
  if (!contains(id)) throw Error("UnknownCheckpoint", fmt::format("no checkpoint '{}'", id));
  auto r = refs();
  r[name] = id;
  util::write_file_atomic(root_ / "refs.json", json(r).dump(2));
}

std::string Store::resolve_ref(const std::string& name) const {
  const auto r = refs();
  const auto it = r.find(name);
  if (it == r.end()) throw Error("UnknownRef", fmt::format("no ref '{}'", name));
  return it->second;
}

void Store::save_references(const validation::ReferenceStore& refs) {
  require_writable();
  if (!contains(refs.seed_digest)) {
    throw Error("UnknownCheckpoint", fmt::format("references belong to unknown seed '{}'", refs.seed_digest));
  }
  const fs::path staging = util::make_unique_dir(root_ / "tmp", "refs");
  refs.save(staging);
  const fs::path target = root_ / "references" / refs.seed_digest;
  fs::remove_all(target);
  fs::rename(staging, target);
}

validation::ReferenceStore Store::references_for(const std::string& id) const {
  const auto seed = lineage(id).front();
  const fs::path dir = root_ / "references" / seed;
  if (!fs::is_directory(dir)) {
    throw Error("MissingReferences", fmt::format("seed '{}' has no reference outputs", seed.substr(0, 12)));
  }
  return validation::ReferenceStore::load(dir);
}

StoreDiff Store::diff(const std::string& a, const std::string& b) const {
  const auto ca = restore(a);
  const auto cb = restore(b);
  StoreDiff d;
  for (const auto kind : context::kAllRegions) {
    const std::string name(context::to_string(kind));
    d.regions[kind] = util::unified_diff(ca.region(kind), cb.region(kind), "a/" + name, "b/" + name);
  }
  d.spec = util::unified_diff(spec::print_spec(ca.spec), spec::print_spec(cb.spec), "a/spec", "b/spec");
  for (const auto& [field, x, y] : {std::tuple{"backend", &ca.backend, &cb.backend},
                                    std::tuple{"kernel", &ca.kernel_name, &cb.kernel_name},
                                    std::tuple{"label", &ca.label, &cb.label}}) {
    if (*x != *y) d.meta += fmt::format("{}: {} -> {}\n", field, *x, *y);
  }

  const auto ma = get(a);
  const auto mb = get(b);
  for (auto it = mb.perf.rbegin(); it != mb.perf.rend(); ++it) {
    const auto* ra = ma.perf_for(it->input_key);
    if (!ra) continue;
    d.delta.input_key = it->input_key.canonical();
    d.delta.a_best_ms = ra->best.mean_time_ms;
    d.delta.b_best_ms = it->best.mean_time_ms;
    d.delta.a_gflops = ra->best_gflops;
    d.delta.b_gflops = it->best_gflops;
    try {
      d.delta.step_speedup = perf::speedup(*it, *ra);
    } catch (const Error&) {
      d.delta.step_speedup.reset();
    }
    break;
  }
  return d;
}

Trajectory Store::trajectory(const std::string& tip, std::optional<double> reference_time_ms,
                             const std::optional<std::string>& input_key) const {
  if (reference_time_ms && !(*reference_time_ms > 0.0)) {
    throw Error("InvalidQuery", "reference time must be positive");
  }
  const auto path = lineage(tip);
  std::vector<Checkpoint> nodes;
  for (const auto& id : path) nodes.push_back(get(id));

  Trajectory t;
  if (input_key) {
    t.input_key = *input_key;
  } else if (!nodes.back().perf.empty()) {
    t.input_key = nodes.back().perf.back().input_key.canonical();
  } else {
    throw Error("MissingPerfData", fmt::format("checkpoint {} has no performance report", tip));
  }

  const perf::PerfReport* seed_report = nullptr;
  const perf::PerfReport* prev = nullptr;
  for (const auto& c : nodes) {
    const perf::PerfReport* r = nullptr;
    for (const auto& candidate : c.perf) {
      if (candidate.input_key.canonical() == t.input_key) r = &candidate;
    }
    if (!r) {
      throw Error("MissingPerfData",
                  fmt::format("checkpoint {} has no performance report for {}", c.id, t.input_key));
    }
    if (!seed_report) seed_report = r;
    TrajectoryStep s;
    s.id = c.id;
    s.transformation_name = c.transformation_name;
    s.best_time_ms = r->best.mean_time_ms;
    s.cumulative_speedup = seed_report->best.mean_time_ms / s.best_time_ms;
    s.step_speedup = prev ? prev->best.mean_time_ms / s.best_time_ms : 1.0;
    s.best_gflops = r->best_gflops;
    if (reference_time_ms) s.percent_of_reference = perf::percent_of(*r, *reference_time_ms);
    t.steps.push_back(std::move(s));
    prev = r;
  }
  return t;
}

}  // namespace peak::store
