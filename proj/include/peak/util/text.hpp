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

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace peak::util {

std::string normalize_newlines(std::string_view text);
std::vector<std::string> split_lines(std::string_view text);
std::string_view trim(std::string_view s);
// Keeps the head of `s`, appending a marker when anything was dropped.
std::string truncate(std::string_view s, std::size_t max_chars);
bool is_identifier(std::string_view s);

// `{{name}}` substitution. The resolver returns nullopt for names it does
// not know, which raises a BadPlaceholder error.
using PlaceholderResolver = std::function<std::optional<std::string>(std::string_view)>;
std::string render_template(std::string_view tmpl, const PlaceholderResolver& resolve);
std::vector<std::string> list_placeholders(std::string_view tmpl);

}  // namespace peak::util
