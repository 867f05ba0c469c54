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

/* CPU emulation of the CUDA execution model used by the cpu-ref backend.
 *
 * Blocks and threads run sequentially in row-major order (x fastest).
 * PEAK_SHARED memory lives in a per-block arena that is cleared between
 * blocks; every thread of a block sees the same allocations. There is no
 * barrier: kernels that need one run on the block leader and loop over the
 * threads of each phase explicitly:
 *
 *   PEAK_BLOCK_LEADER_ONLY;
 *   PEAK_SHARED(float, tile, 16 * 16);
 *   PEAK_FOR_EACH_THREAD(tx, ty) { tile[ty * 16 + tx] = ...; }
 *   PEAK_FOR_EACH_THREAD(tx, ty) { ... reads tile ... }
 *
 * PEAK_PLANT_TIME_MS(ms) replaces the measured time of the current run with
 * `ms`. Timing fixtures use it to get an exact, noise-free landscape.
 */
#ifndef PEAK_RUNTIME_H
#define PEAK_RUNTIME_H

// Kernels run on the calling thread, so process CPU time excludes preemption.
#define PEAK_CPU_TIME 1
#include "peak_common.h"

#ifndef PEAK_MAX_THREADS_PER_BLOCK
#define PEAK_MAX_THREADS_PER_BLOCK 1024
#endif
#define PEAK_SHARED_BYTES (48 * 1024)

struct dim3 {
  unsigned x, y, z;
  dim3(unsigned x_ = 1, unsigned y_ = 1, unsigned z_ = 1) : x(x_), y(y_), z(z_) {}
};

static dim3 gridDim, blockDim, blockIdx, threadIdx;

struct peak_half {
  uint16_t bits;
  peak_half() : bits(0) {}
  peak_half(float f) : bits(peak_float_to_half_bits(f)) {}
  operator float() const { return peak_half_bits_to_float(bits); }
};
typedef peak_half half;
typedef peak_half __half;

#define __global__ static
#define __device__ static inline
#define __host__
#define __forceinline__ inline
#define __restrict__ __restrict
#define __syncthreads() PEAK_cpu_ref_has_no_barrier_use_PEAK_FOR_EACH_THREAD

static double peak_planted_ms = -1.0;
#define PEAK_PLANT_TIME_MS(ms) (peak_planted_ms = (double)(ms))

static unsigned char peak_shared_arena[PEAK_SHARED_BYTES] __attribute__((aligned(16)));
static size_t peak_shared_top = 0;
static size_t peak_shared_high = 0;

static void* peak_shared_alloc(size_t bytes) {
  const size_t at = (peak_shared_top + 15u) & ~(size_t)15u;
  if (bytes > PEAK_SHARED_BYTES || at > PEAK_SHARED_BYTES - bytes) peak_invalid_config();
  peak_shared_top = at + bytes;
  if (peak_shared_top > peak_shared_high) peak_shared_high = peak_shared_top;
  return peak_shared_arena + at;
}

#define PEAK_SHARED(type, name, count) type* name = (type*)peak_shared_alloc(sizeof(type) * (size_t)(count))
#define PEAK_INVALID_CONFIG() peak_invalid_config()
#define PEAK_BLOCK_LEADER_ONLY \
  if (threadIdx.x != 0 || threadIdx.y != 0 || threadIdx.z != 0) return
#define PEAK_FOR_EACH_THREAD(tx, ty)                 \
  for (unsigned ty = 0; ty < blockDim.y; ++ty)       \
    for (unsigned tx = 0; tx < blockDim.x; ++tx)     \
      if ((threadIdx.x = tx), (threadIdx.y = ty), 1)

static void peak_begin_launch(dim3 grid, dim3 block) {
  if (!grid.x || !grid.y || !grid.z || !block.x || !block.y || !block.z) peak_invalid_config();
  if ((unsigned long long)block.x * block.y * block.z > PEAK_MAX_THREADS_PER_BLOCK) peak_invalid_config();
  gridDim = grid;
  blockDim = block;
}

static void peak_begin_block(unsigned bx, unsigned by, unsigned bz) {
  blockIdx = dim3(bx, by, bz);
  memset(peak_shared_arena, 0, peak_shared_high);
  peak_shared_high = 0;
}

#define PEAK_LAUNCH(kernel, grid, block, ...)                                         \
  do {                                                                                \
    peak_begin_launch((grid), (block));                                               \
    for (unsigned peak_bz = 0; peak_bz < gridDim.z; ++peak_bz)                        \
      for (unsigned peak_by = 0; peak_by < gridDim.y; ++peak_by)                      \
        for (unsigned peak_bx = 0; peak_bx < gridDim.x; ++peak_bx) {                  \
          peak_begin_block(peak_bx, peak_by, peak_bz);                                \
          for (unsigned peak_tz = 0; peak_tz < blockDim.z; ++peak_tz)                 \
            for (unsigned peak_ty = 0; peak_ty < blockDim.y; ++peak_ty)               \
              for (unsigned peak_tx = 0; peak_tx < blockDim.x; ++peak_tx) {           \
                threadIdx = dim3(peak_tx, peak_ty, peak_tz);                          \
                peak_shared_top = 0;                                                  \
                kernel(__VA_ARGS__);                                                  \
              }                                                                       \
        }                                                                             \
  } while (0)

/* Host arrays are the device arrays. */
#define PEAK_ARRAY_DECL(name, type) static type* peak_h_##name;
#define PEAK_ARRAY_ALLOC(name, type, count) peak_h_##name = (type*)peak_host_alloc(sizeof(type) * (size_t)(count));
#define PEAK_ARRAY_UPLOAD(name, type, count)
#define PEAK_ARRAY_DOWNLOAD(name, type, count)
#define PEAK_HOST(name) peak_h_##name
#define PEAK_ARG(name) peak_h_##name
#define PEAK_SYNC()

#endif
