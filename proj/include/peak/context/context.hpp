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

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "peak/spec/types.hpp"

namespace peak::context {

enum class RegionKind { device, host, macros };

inline constexpr RegionKind kAllRegions[] = {RegionKind::device, RegionKind::host, RegionKind::macros};

std::string_view to_string(RegionKind kind) noexcept;
// Throws Error("BadRegion") for anything but device, host or macros.
RegionKind parse_region(std::string_view name);

// Value type. Region text is kept with LF line endings.
struct KernelContext {
  std::string device;
  std::string host;
  std::string macros;
  spec::InputSpec spec;
  std::string backend;
  std::string kernel_name;
  std::string label;

  const std::string& region(RegionKind kind) const;
  std::string& region(RegionKind kind);
};

// Builds a context and runs check_context on it.
KernelContext make_context(std::string device, std::string host, std::string macros, spec::InputSpec spec,
                           std::string backend, std::string kernel_name, std::string label = {});

// Placeholder closure, kernel name presence and non-empty device/host text.
// Throws Error with codes OrphanPlaceholder, OrphanDeclaration,
// MissingKernelName, EmptyRegion or BadIdentifier.
void check_context(const KernelContext& ctx);

// Names of `@TUNE(NAME)` tokens in order of first appearance.
std::vector<std::string> placeholders(std::string_view text);
std::vector<std::string> placeholders(const KernelContext& ctx);

struct Regions {
  std::string device;
  std::string host;
  std::string macros;
};

// Replaces every `@TUNE(NAME)` with the decimal tuning value from params.
// Errors: UnknownPlaceholder (no declaration), MissingTuningValue.
Regions substitute_tuning(const KernelContext& ctx, const spec::ExecutionParams& params);

// Copy of ctx with one region replaced; re-checks the placeholder closure.
KernelContext replace_region(const KernelContext& ctx, RegionKind kind, std::string_view new_text);

std::string canonical_serialize(const KernelContext& ctx);
// Throws Error("MalformedContext") on bytes not produced by canonical_serialize.
KernelContext canonical_deserialize(std::string_view bytes);

struct ContextDigest {
  std::string hash;  // 64 hex characters
  std::string short_form() const { return hash.substr(0, 12); }
  bool operator==(const ContextDigest&) const = default;
};

// SHA-256 over the canonical serialization with the label left out.
ContextDigest digest(const KernelContext& ctx);

// Compares canonical serializations, label included.
bool operator==(const KernelContext& a, const KernelContext& b);

// Directory bundle: device.src, host.src, macros.src, spec.pspec, meta.
void save_bundle(const KernelContext& ctx, const std::filesystem::path& dir);
KernelContext load_bundle(const std::filesystem::path& dir);

}  // namespace peak::context
