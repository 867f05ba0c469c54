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

namespace peak::util {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, std::string_view content);
// Writes to a sibling temporary and renames over `path`.
void write_file_atomic(const fs::path& path, std::string_view content);

// Owns a freshly created directory and removes it on destruction.
class TempDir {
 public:
  explicit TempDir(std::string_view prefix = "peak");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  TempDir(TempDir&& other) noexcept;
  TempDir& operator=(TempDir&& other) noexcept;

  const fs::path& path() const noexcept { return path_; }
  // Stop owning the directory; it will outlive this object.
  fs::path release() noexcept;

 private:
  fs::path path_;
};

fs::path make_unique_dir(const fs::path& parent, std::string_view prefix);

}  // namespace peak::util
