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

#include "peak/perf/perf.hpp"

namespace peak::testing {

// A perf report for `ctx` in which every valid point of the key takes `ms`.
inline perf::PerfReport planted_report(const context::KernelContext& ctx, double ms,
                                       const std::string& key = "n=64") {
  perf::FunctionMeasurer m([ms](const spec::ExecutionParams&) {
    perf::PointResult r;
    r.mean_time_ms = ms;
    return r;
  });
  perf::PerfQuery q;
  q.input_key = perf::select_input_key(ctx.spec, key);
  q.flops = perf::FlopsModel{};
  return perf::evaluate(ctx, q, m);
}

}  // namespace peak::testing
