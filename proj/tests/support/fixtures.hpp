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

#include <string>

#include "peak/context/context.hpp"
#include "peak/spec/enumerate.hpp"
#include "peak/spec/parser.hpp"
#include "peak/util/data_dir.hpp"

namespace peak::testing {

inline context::KernelContext seed_context(const std::string& name = "matmul-cpu") {
  return context::load_bundle(util::data_dir() / "seeds" / name);
}

// The seed's execution parameters for one n, with the given block dims.
inline spec::ExecutionParams seed_params(const context::KernelContext& ctx, int n, int bx, int by) {
  for (auto& p : spec::enumerate_execution_params(ctx.spec)) {
    if (std::get<std::int32_t>(*p.scalar("n")) == n && p.tuning_value("BLOCK_X") == bx &&
        p.tuning_value("BLOCK_Y") == by) {
      return p;
    }
  }
  throw std::runtime_error("no such seed params");
}

// Builds a context from a spec and code without the closure check, so tests
// can construct deliberately broken contexts.
inline context::KernelContext raw_context(std::string spec_text, std::string device, std::string host,
                                          std::string macros = {}, std::string kernel = "k") {
  context::KernelContext ctx;
  ctx.spec = spec::parse_spec(spec_text);
  ctx.device = std::move(device);
  ctx.host = std::move(host);
  ctx.macros = std::move(macros);
  ctx.backend = "cpu-ref";
  ctx.kernel_name = std::move(kernel);
  return ctx;
}

}  // namespace peak::testing
