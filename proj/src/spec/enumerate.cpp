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

#include "peak/spec/enumerate.hpp"

#include <algorithm>
#include <functional>
#include <set>

#include <fmt/core.h>

#include "peak/spec/eval.hpp"
#include "peak/spec/parser.hpp"
#include "peak/util/splitmix.hpp"

namespace peak::spec {

namespace {

void collect_names(const Expr& e, std::set<std::string>& out) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, NameRef>) out.insert(n.name);
        else if constexpr (std::is_same_v<T, SizeRef>) out.insert(n.array + ".size");
        else if constexpr (std::is_same_v<T, Unary>) collect_names(*n.operand, out);
        else if constexpr (std::is_same_v<T, Binary>) {
          collect_names(*n.lhs, out);
          collect_names(*n.rhs, out);
        }
      },
      e.node);
}

bool check_constraint(const ConstraintExpr& c, const Bindings& b) {
  try {
    return evaluate_predicate(*c.expr, b);
  } catch (const SpecError& e) {
    throw SpecError("EvaluationError", fmt::format("constraint failed to evaluate: {}", e.what()), c.pos);
  }
}

class Enumerator {
 public:
  explicit Enumerator(const InputSpec& spec) : spec_(spec) {
    const std::size_t s = spec.scalars.size();
    const std::size_t a = spec.arrays.size();
    levels_ = s + a + spec.tuning.size();
    std::vector<std::string> level_names;
    for (const auto& d : spec.scalars) level_names.push_back(d.name);
    for (const auto& d : spec.arrays) level_names.push_back(d.name + ".size");
    for (const auto& d : spec.tuning) level_names.push_back(d.name);

    // constraint i is checked right after the deepest level it references
    checks_.resize(levels_ + 1);
    for (const auto& c : spec.constraints) {
      std::set<std::string> names;
      collect_names(*c.expr, names);
      std::size_t level = 0;  // 0 = before any binding
      for (std::size_t l = 0; l < level_names.size(); ++l) {
        if (names.count(level_names[l])) level = std::max(level, l + 1);
      }
      checks_[level].push_back(&c);
    }
    scalar_sets_.reserve(s);
    for (const auto& d : spec.scalars) scalar_sets_.push_back(scalar_values(d));
    for (const auto& d : spec.tuning) tuning_sets_.push_back(tuning_values(d));
  }

  void run(const std::function<void(const ExecutionParams&)>& emit) {
    emit_ = &emit;
    ExecutionParams p;
    Bindings b;
    if (!passes(0, b)) return;
    descend(0, p, b);
  }

 private:
  bool passes(std::size_t level, const Bindings& b) const {
    for (const auto* c : checks_[level]) {
      if (!check_constraint(*c, b)) return false;
    }
    return true;
  }

  void descend(std::size_t level, ExecutionParams& p, Bindings& b) {
    if (level == levels_) {
      (*emit_)(p);
      return;
    }
    const std::size_t s = spec_.scalars.size();
    const std::size_t a = spec_.arrays.size();
    if (level < s) {
      const auto& decl = spec_.scalars[level];
      for (const auto& v : scalar_sets_[level]) {
        p.scalars.emplace_back(decl.name, v);
        const bool is_int = std::holds_alternative<std::int32_t>(v);
        if (is_int) b[decl.name] = std::get<std::int32_t>(v);
        if (passes(level + 1, b)) descend(level + 1, p, b);
        if (is_int) b.erase(decl.name);
        p.scalars.pop_back();
      }
    } else if (level < s + a) {
      const auto& decl = spec_.arrays[level - s];
      const std::string key = decl.name + ".size";
      for (auto size : array_sizes(decl, b)) {
        p.array_sizes.emplace_back(decl.name, size);
        b[key] = size;
        if (passes(level + 1, b)) descend(level + 1, p, b);
        b.erase(key);
        p.array_sizes.pop_back();
      }
    } else {
      const std::size_t t = level - s - a;
      const auto& decl = spec_.tuning[t];
      for (auto v : tuning_sets_[t]) {
        p.tuning.emplace_back(decl.name, v);
        b[decl.name] = v;
        if (passes(level + 1, b)) descend(level + 1, p, b);
        b.erase(decl.name);
        p.tuning.pop_back();
      }
    }
  }

  const InputSpec& spec_;
  std::size_t levels_ = 0;
  std::vector<std::vector<const ConstraintExpr*>> checks_;
  std::vector<std::vector<ScalarValue>> scalar_sets_;
  std::vector<std::vector<std::int64_t>> tuning_sets_;
  const std::function<void(const ExecutionParams&)>* emit_ = nullptr;
};

}  // namespace

std::vector<ExecutionParams> enumerate_execution_params(const InputSpec& spec) {
  std::vector<ExecutionParams> out;
  Enumerator e(spec);
  e.run([&](const ExecutionParams& p) { out.push_back(p); });
  return out;
}

bool satisfies_constraints(const InputSpec& spec, const ExecutionParams& params) {
  const Bindings b = params.bindings();
  for (const auto& c : spec.constraints) {
    if (!check_constraint(c, b)) return false;
  }
  return true;
}

std::vector<ExecutionParams> sample_from(const InputSpec& spec, std::span<const ExecutionParams> space,
                                         std::size_t budget, std::uint64_t seed) {
  if (budget >= space.size()) return {space.begin(), space.end()};
  util::SplitMix64 rng(seed);
  std::vector<bool> chosen(space.size(), false);
  std::size_t picked = 0;

  // coverage of each scalar's extremes first
  for (const auto& decl : spec.scalars) {
    const auto values = scalar_values(decl);
    std::vector<ScalarValue> targets{values.front()};
    if (values.size() > 1) targets.push_back(values.back());
    for (const auto& target : targets) {
      if (picked >= budget) break;
      bool covered = false;
      std::vector<std::size_t> candidates;
      for (std::size_t i = 0; i < space.size(); ++i) {
        const auto* v = space[i].scalar(decl.name);
        if (!v || !(*v == target)) continue;
        if (chosen[i]) {
          covered = true;
          break;
        }
        candidates.push_back(i);
      }
      if (covered || candidates.empty()) continue;
      chosen[candidates[rng.next_below(candidates.size())]] = true;
      ++picked;
    }
  }

  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (!chosen[i]) rest.push_back(i);
  }
  for (std::size_t k = 0; picked < budget && k < rest.size(); ++k, ++picked) {
    const std::size_t j = k + rng.next_below(rest.size() - k);
    std::swap(rest[k], rest[j]);
    chosen[rest[k]] = true;
  }

  std::vector<ExecutionParams> out;
  out.reserve(budget);
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (chosen[i]) out.push_back(space[i]);
  }
  return out;
}

std::vector<ExecutionParams> sample_execution_params(const InputSpec& spec, std::size_t budget,
                                                     std::uint64_t seed) {
  if (budget == 0) throw SpecError("ValueError", "sampling budget must be at least 1");
  const auto space = enumerate_execution_params(spec);
  return sample_from(spec, space, budget, seed);
}

std::vector<InputKey> enumerate_input_keys(const InputSpec& spec) {
  std::vector<InputKey> keys;
  std::set<std::string> seen;
  Enumerator e(spec);
  e.run([&](const ExecutionParams& p) {
    auto key = p.input_key();
    if (seen.insert(key.canonical()).second) keys.push_back(std::move(key));
  });
  return keys;
}

}  // namespace peak::spec
