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

#include "peak/context/context.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include <fmt/core.h>
#include <json.hpp>

#include "peak/error.hpp"
#include "peak/spec/parser.hpp"
#include "peak/spec/printer.hpp"
#include "peak/util/fs.hpp"
#include "peak/util/hash.hpp"
#include "peak/util/text.hpp"

namespace peak::context {

namespace {

constexpr std::string_view kOpen = "@TUNE(";
constexpr std::string_view kMagic = "peak-context 1\n";

struct Token {
  std::size_t begin;
  std::size_t end;  // one past ')'
  std::string name;
};

std::vector<Token> scan(std::string_view text) {
  std::vector<Token> out;
  std::size_t at = 0;
  while ((at = text.find(kOpen, at)) != std::string_view::npos) {
    const std::size_t close = text.find(')', at + kOpen.size());
    if (close == std::string_view::npos) {
      throw Error("MalformedPlaceholder", "unterminated '@TUNE(' placeholder");
    }
    std::string name{util::trim(text.substr(at + kOpen.size(), close - at - kOpen.size()))};
    if (!util::is_identifier(name)) {
      throw Error("MalformedPlaceholder", fmt::format("'@TUNE({})' does not name a tuning parameter", name));
    }
    out.push_back({at, close + 1, std::move(name)});
    at = close + 1;
  }
  return out;
}

void put_field(std::string& out, std::string_view tag, std::string_view value) {
  out += fmt::format("{} {}\n", tag, value.size());
  out += value;
  out += '\n';
}

std::string serialize(const KernelContext& ctx, bool with_label) {
  std::string out{kMagic};
  put_field(out, "backend", ctx.backend);
  put_field(out, "kernel_name", ctx.kernel_name);
  put_field(out, "device", util::normalize_newlines(ctx.device));
  put_field(out, "host", util::normalize_newlines(ctx.host));
  put_field(out, "macros", util::normalize_newlines(ctx.macros));
  put_field(out, "spec", spec::print_spec(ctx.spec));
  if (with_label) put_field(out, "label", util::normalize_newlines(ctx.label));
  return out;
}

}  // namespace

std::string_view to_string(RegionKind kind) noexcept {
  switch (kind) {
    case RegionKind::device: return "device";
    case RegionKind::host: return "host";
    case RegionKind::macros: return "macros";
  }
  return "device";
}

RegionKind parse_region(std::string_view name) {
  for (const auto k : kAllRegions) {
    if (to_string(k) == name) return k;
  }
  throw Error("BadRegion", fmt::format("unknown region '{}' (expected device, host or macros)", name));
}

const std::string& KernelContext::region(RegionKind kind) const {
  switch (kind) {
    case RegionKind::host: return host;
    case RegionKind::macros: return macros;
    default: return device;
  }
}

std::string& KernelContext::region(RegionKind kind) {
  return const_cast<std::string&>(std::as_const(*this).region(kind));
}

KernelContext make_context(std::string device, std::string host, std::string macros, spec::InputSpec spec,
                           std::string backend, std::string kernel_name, std::string label) {
  KernelContext ctx{util::normalize_newlines(device), util::normalize_newlines(host),
                    util::normalize_newlines(macros), std::move(spec), std::move(backend),
                    std::move(kernel_name), std::move(label)};
  check_context(ctx);
  return ctx;
}

std::vector<std::string> placeholders(std::string_view text) {
  std::vector<std::string> names;
  for (auto& t : scan(text)) {
    if (std::find(names.begin(), names.end(), t.name) == names.end()) names.push_back(std::move(t.name));
  }
  return names;
}

std::vector<std::string> placeholders(const KernelContext& ctx) {
  std::vector<std::string> names;
  for (const auto k : kAllRegions) {
    for (auto& n : placeholders(ctx.region(k))) {
      if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(std::move(n));
    }
  }
  return names;
}

void check_context(const KernelContext& ctx) {
  const bool backend_ok = !ctx.backend.empty() && std::all_of(ctx.backend.begin(), ctx.backend.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
  });
  if (!backend_ok) throw Error("BadIdentifier", fmt::format("invalid backend id '{}'", ctx.backend));
  if (!util::is_identifier(ctx.kernel_name)) {
    throw Error("BadIdentifier", fmt::format("invalid kernel name '{}'", ctx.kernel_name));
  }
  if (util::trim(ctx.device).empty()) throw Error("EmptyRegion", "the device region is empty");
  if (util::trim(ctx.host).empty()) throw Error("EmptyRegion", "the host region is empty");
  if (ctx.device.find(ctx.kernel_name) == std::string::npos) {
    throw Error("MissingKernelName", fmt::format("kernel '{}' does not appear in the device region", ctx.kernel_name));
  }
  const auto used = placeholders(ctx);
  for (const auto& name : used) {
    if (!ctx.spec.find_tuning(name)) {
      throw Error("OrphanPlaceholder", fmt::format("placeholder '@TUNE({})' has no tuning declaration", name));
    }
  }
  for (const auto& decl : ctx.spec.tuning) {
    if (std::find(used.begin(), used.end(), decl.name) == used.end()) {
      throw Error("OrphanDeclaration", fmt::format("tuning parameter '{}' is never used in code", decl.name));
    }
  }
}

Regions substitute_tuning(const KernelContext& ctx, const spec::ExecutionParams& params) {
  const auto subst = [&](const std::string& text) {
    std::string out;
    std::size_t last = 0;
    for (const auto& t : scan(text)) {
      if (!ctx.spec.find_tuning(t.name)) {
        throw Error("UnknownPlaceholder", fmt::format("placeholder '@TUNE({})' is not declared", t.name));
      }
      const auto value = params.tuning_value(t.name);
      if (!value) throw Error("MissingTuningValue", fmt::format("no value for tuning parameter '{}'", t.name));
      out.append(text, last, t.begin - last);
      out += std::to_string(*value);
      last = t.end;
    }
    out.append(text, last, std::string::npos);
    return out;
  };
  return {subst(ctx.device), subst(ctx.host), subst(ctx.macros)};
}

KernelContext replace_region(const KernelContext& ctx, RegionKind kind, std::string_view new_text) {
  KernelContext out = ctx;
  out.region(kind) = util::normalize_newlines(new_text);
  check_context(out);
  return out;
}

std::string canonical_serialize(const KernelContext& ctx) { return serialize(ctx, true); }

KernelContext canonical_deserialize(std::string_view bytes) {
  const auto bad = [](std::string_view why) { return Error("MalformedContext", std::string(why)); };
  if (bytes.substr(0, kMagic.size()) != kMagic) throw bad("missing context header");
  std::size_t at = kMagic.size();
  const auto field = [&](std::string_view tag) {
    const std::size_t eol = bytes.find('\n', at);
    if (eol == std::string_view::npos) throw bad(fmt::format("truncated before '{}'", tag));
    const std::string_view head = bytes.substr(at, eol - at);
    if (head.substr(0, tag.size()) != tag || head.size() <= tag.size() || head[tag.size()] != ' ') {
      throw bad(fmt::format("expected field '{}'", tag));
    }
    std::size_t len = 0;
    const auto digits = head.substr(tag.size() + 1);
    if (std::from_chars(digits.data(), digits.data() + digits.size(), len).ec != std::errc{}) {
      throw bad(fmt::format("bad length for '{}'", tag));
    }
    if (eol + 1 + len + 1 > bytes.size() || bytes[eol + 1 + len] != '\n') {
      throw bad(fmt::format("truncated field '{}'", tag));
    }
    at = eol + 1 + len + 1;
    return std::string(bytes.substr(eol + 1, len));
  };
  KernelContext ctx;
  ctx.backend = field("backend");
  ctx.kernel_name = field("kernel_name");
  ctx.device = field("device");
  ctx.host = field("host");
  ctx.macros = field("macros");
  ctx.spec = spec::parse_spec(field("spec"));
  ctx.label = field("label");
  if (at != bytes.size()) throw bad("trailing bytes after context");
  return ctx;
}

ContextDigest digest(const KernelContext& ctx) { return {util::sha256_hex(serialize(ctx, false))}; }

bool operator==(const KernelContext& a, const KernelContext& b) {
  return canonical_serialize(a) == canonical_serialize(b);
}

void save_bundle(const KernelContext& ctx, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  util::write_file(dir / "device.src", util::normalize_newlines(ctx.device));
  util::write_file(dir / "host.src", util::normalize_newlines(ctx.host));
  util::write_file(dir / "macros.src", util::normalize_newlines(ctx.macros));
  util::write_file(dir / "spec.pspec", spec::print_spec(ctx.spec));
  const nlohmann::ordered_json meta = {
      {"backend", ctx.backend}, {"kernel_name", ctx.kernel_name}, {"label", ctx.label}};
  util::write_file(dir / "meta", meta.dump(2) + "\n");
}

KernelContext load_bundle(const std::filesystem::path& dir) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(util::read_file(dir / "meta"));
  } catch (const nlohmann::json::exception& e) {
    throw Error("MalformedContext", fmt::format("{}: {}", (dir / "meta").string(), e.what()));
  }
  const auto macros_path = dir / "macros.src";
  return make_context(util::read_file(dir / "device.src"), util::read_file(dir / "host.src"),
                      std::filesystem::exists(macros_path) ? util::read_file(macros_path) : std::string{},
                      spec::parse_spec(util::read_file(dir / "spec.pspec")), meta.at("backend").get<std::string>(),
                      meta.at("kernel_name").get<std::string>(), meta.value("label", std::string{}));
}

}  // namespace peak::context
