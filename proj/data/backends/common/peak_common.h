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

/* Host-side helpers shared by every generated driver. C headers only. */
#ifndef PEAK_COMMON_H
#define PEAK_COMMON_H

#include <math.h>
#include <stddef.h>
#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <time.h>

static void peak_invalid_config(void) {
  printf("PEAK_INVALID_CONFIG\n");
  fflush(stdout);
  exit(3);
}

static void peak_fail(const char* what) {
  fprintf(stderr, "peak driver: %s\n", what);
  exit(2);
}

static double peak_now_ms(void) {
  struct timespec ts;
#ifdef PEAK_CPU_TIME
  clock_gettime(CLOCK_PROCESS_CPUTIME_ID, &ts);
#else
  clock_gettime(CLOCK_MONOTONIC, &ts);
#endif
  return (double)ts.tv_sec * 1e3 + (double)ts.tv_nsec * 1e-6;
}

static uint64_t peak_splitmix64(uint64_t* state) {
  uint64_t z = (*state += UINT64_C(0x9E3779B97F4A7C15));
  z = (z ^ (z >> 30)) * UINT64_C(0xBF58476D1CE4E5B9);
  z = (z ^ (z >> 27)) * UINT64_C(0x94D049BB133111EB);
  return z ^ (z >> 31);
}

static float peak_half_bits_to_float(uint16_t h) {
  const uint32_t sign = (uint32_t)(h & 0x8000u) << 16;
  uint32_t exp = (h >> 10) & 0x1fu;
  uint32_t mant = h & 0x3ffu;
  uint32_t bits;
  if (exp == 0x1f) {
    bits = sign | 0x7f800000u | (mant << 13);
  } else if (exp != 0) {
    bits = sign | ((exp + 112u) << 23) | (mant << 13);
  } else if (mant == 0) {
    bits = sign;
  } else {
    exp = 113;
    while (!(mant & 0x400u)) {
      mant <<= 1;
      --exp;
    }
    bits = sign | (exp << 23) | ((mant & 0x3ffu) << 13);
  }
  float f;
  memcpy(&f, &bits, sizeof f);
  return f;
}

static uint16_t peak_float_to_half_bits(float f) {
  uint32_t x;
  memcpy(&x, &f, sizeof x);
  const uint16_t sign = (uint16_t)((x >> 16) & 0x8000u);
  const int32_t exp = (int32_t)((x >> 23) & 0xffu);
  uint32_t mant = x & 0x7fffffu;
  if (exp == 0xff) return (uint16_t)(sign | 0x7c00u | (mant ? 0x200u : 0u));
  const int32_t e = exp - 127 + 15;
  if (e >= 0x1f) return (uint16_t)(sign | 0x7c00u);
  if (e <= 0) {
    if (e < -10) return sign;
    mant |= 0x800000u;
    const uint32_t shift = (uint32_t)(14 - e);
    uint32_t half = mant >> shift;
    const uint32_t rem = mant & ((1u << shift) - 1u);
    const uint32_t mid = 1u << (shift - 1u);
    if (rem > mid || (rem == mid && (half & 1u))) ++half;
    return (uint16_t)(sign | half);
  }
  uint32_t half = ((uint32_t)e << 10) | (mant >> 13);
  const uint32_t rem = mant & 0x1fffu;
  if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) ++half;
  return (uint16_t)(sign | half);
}

static void peak_fill_zeros(void* p, size_t bytes) { memset(p, 0, bytes); }

static void peak_fill_ones_f32(float* p, size_t n) {
  for (size_t i = 0; i < n; ++i) p[i] = 1.0f;
}
static void peak_fill_ones_f16(uint16_t* p, size_t n) {
  for (size_t i = 0; i < n; ++i) p[i] = 0x3c00u;
}
static void peak_fill_ones_i32(int32_t* p, size_t n) {
  for (size_t i = 0; i < n; ++i) p[i] = 1;
}

/* Uniform in [-1, 1) from the top 24 bits. */
static float peak_random_unit(uint64_t* state) {
  return (float)(uint32_t)(peak_splitmix64(state) >> 40) * (2.0f / 16777216.0f) - 1.0f;
}
static void peak_fill_random_f32(float* p, size_t n, uint64_t seed) {
  for (size_t i = 0; i < n; ++i) p[i] = peak_random_unit(&seed);
}
static void peak_fill_random_f16(uint16_t* p, size_t n, uint64_t seed) {
  for (size_t i = 0; i < n; ++i) p[i] = peak_float_to_half_bits(peak_random_unit(&seed));
}
/* Uniform in [-8, 7]. */
static void peak_fill_random_i32(int32_t* p, size_t n, uint64_t seed) {
  for (size_t i = 0; i < n; ++i) p[i] = (int32_t)(peak_splitmix64(&seed) >> 60) - 8;
}

static void* peak_host_alloc(size_t bytes) {
  void* p = malloc(bytes ? bytes : 1);
  if (!p) peak_fail("out of host memory");
  return p;
}

/* Raw little-endian dump; the runtime passes an absolute directory. */
static void peak_write_output(const char* dir, const char* name, const void* p, size_t bytes) {
  char path[4096];
  snprintf(path, sizeof path, "%s/%s.bin", dir, name);
  FILE* f = fopen(path, "wb");
  if (!f) peak_fail("cannot open output file");
  if (bytes && fwrite(p, 1, bytes, f) != bytes) peak_fail("short write on output file");
  fclose(f);
  printf("PEAK_OUT %s %s\n", name, path);
}

#endif
