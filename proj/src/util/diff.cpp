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

#include "peak/util/diff.hpp"

#include <algorithm>
#include <vector>

#include <fmt/core.h>

#include "peak/util/text.hpp"

namespace peak::util {

namespace {

enum class Op { keep, remove, add };

struct Edit {
  Op op;
  std::size_t a;  // index into before (keep/remove)
  std::size_t b;  // index into after (keep/add)
};

std::vector<Edit> lcs_edits(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<std::vector<std::uint32_t>> len(n + 1, std::vector<std::uint32_t>(m + 1, 0));
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = m; j-- > 0;) {
      len[i][j] = a[i] == b[j] ? len[i + 1][j + 1] + 1 : std::max(len[i + 1][j], len[i][j + 1]);
    }
  }
  std::vector<Edit> edits;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < n || j < m) {
    if (i < n && j < m && a[i] == b[j]) {
      edits.push_back({Op::keep, i++, j++});
    } else if (i < n && (j == m || len[i + 1][j] >= len[i][j + 1])) {
      edits.push_back({Op::remove, i++, j});
    } else {
      edits.push_back({Op::add, i, j++});
    }
  }
  return edits;
}

}  // namespace

std::string unified_diff(std::string_view before, std::string_view after,
                         std::string_view label_before, std::string_view label_after) {
  if (before == after) return {};
  const auto a = split_lines(before);
  const auto b = split_lines(after);
  const auto edits = lcs_edits(a, b);
  constexpr std::size_t kContext = 3;

  std::string out = fmt::format("--- {}\n+++ {}\n", label_before, label_after);
  std::size_t k = 0;
  while (k < edits.size()) {
    // find next change
    while (k < edits.size() && edits[k].op == Op::keep) ++k;
    if (k == edits.size()) break;
    std::size_t start = k >= kContext ? k - kContext : 0;
    // extend while changes are within 2*context of each other
    std::size_t end = k;
    std::size_t last_change = k;
    while (end < edits.size()) {
      if (edits[end].op != Op::keep) last_change = end;
      if (end - last_change > 2 * kContext) break;
      ++end;
    }
    end = std::min(edits.size(), last_change + kContext + 1);

    std::size_t a_start = 0, b_start = 0, a_len = 0, b_len = 0;
    bool first = true;
    std::string body;
    for (std::size_t e = start; e < end; ++e) {
      const auto& ed = edits[e];
      if (first) {
        a_start = ed.a;
        b_start = ed.b;
        first = false;
      }
      switch (ed.op) {
        case Op::keep:
          body += " " + a[ed.a] + "\n";
          ++a_len;
          ++b_len;
          break;
        case Op::remove:
          body += "-" + a[ed.a] + "\n";
          ++a_len;
          break;
        case Op::add:
          body += "+" + b[ed.b] + "\n";
          ++b_len;
          break;
      }
    }
    out += fmt::format("@@ -{},{} +{},{} @@\n", a_len ? a_start + 1 : a_start, a_len,
                       b_len ? b_start + 1 : b_start, b_len);
    out += body;
    k = end;
  }
  return out;
}

}  // namespace peak::util
