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

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "peak/util/splitmix.hpp"

namespace peak::testing {

// Mirrors the driver's `random(seed)` initialisation for f32 arrays.
inline std::vector<float> random_f32(std::size_t count, std::uint64_t seed) {
  util::SplitMix64 rng(seed);
  std::vector<float> v(count);
  for (auto& x : v) x = rng.next_signed_unit();
  return v;
}

// Row-major C = A * B with the naive kernel's accumulation order.
inline std::vector<float> matmul(const std::vector<float>& a, const std::vector<float>& b, int n) {
  std::vector<float> c(static_cast<std::size_t>(n) * n);
  for (int row = 0; row < n; ++row) {
    for (int col = 0; col < n; ++col) {
      float sum = 0.0f;
      for (int k = 0; k < n; ++k) sum += a[row * n + k] * b[k * n + col];
      c[row * n + col] = sum;
    }
  }
  return c;
}

inline std::vector<float> seed_matmul_oracle(int n) {
  const auto count = static_cast<std::size_t>(n) * n;
  return matmul(random_f32(count, 1), random_f32(count, 2), n);
}

template <typename T>
std::vector<T> from_bytes(const std::string& raw) {
  std::vector<T> v(raw.size() / sizeof(T));
  std::memcpy(v.data(), raw.data(), v.size() * sizeof(T));
  return v;
}

template <typename T>
std::string to_bytes(const std::vector<T>& v) {
  return std::string(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
}

}  // namespace peak::testing
