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

/* CUDA runtime glue for generated drivers. */
#ifndef PEAK_RUNTIME_H
#define PEAK_RUNTIME_H

#include <cuda_fp16.h>
#include <cuda_runtime.h>

#include "peak_common.h"

#ifndef PEAK_MAX_THREADS_PER_BLOCK
#define PEAK_MAX_THREADS_PER_BLOCK 1024
#endif

#define PEAK_CUDA_CHECK(expr)                                                  \
  do {                                                                         \
    cudaError_t peak_e_ = (expr);                                              \
    if (peak_e_ != cudaSuccess) {                                              \
      fprintf(stderr, "%s:%d: %s\n", __FILE__, __LINE__, cudaGetErrorString(peak_e_)); \
      exit(2);                                                                 \
    }                                                                          \
  } while (0)

#define PEAK_SHARED(type, name, count) __shared__ type name[count]
#define PEAK_INVALID_CONFIG() peak_invalid_config()
#define PEAK_BLOCK_LEADER_ONLY
/* One phase per thread, closed by a block-wide barrier. */
#define PEAK_FOR_EACH_THREAD(tx, ty)                                                   \
  for (unsigned tx = threadIdx.x, ty = threadIdx.y, peak_once_ = 1; peak_once_;       \
       peak_once_ = 0, __syncthreads())

#define PEAK_LAUNCH(kernel, grid, block, ...)                                          \
  do {                                                                                 \
    const dim3 peak_b_ = (block);                                                      \
    if ((unsigned long long)peak_b_.x * peak_b_.y * peak_b_.z > PEAK_MAX_THREADS_PER_BLOCK) \
      peak_invalid_config();                                                           \
    kernel<<<(grid), peak_b_>>>(__VA_ARGS__);                                          \
    const cudaError_t peak_e_ = cudaGetLastError();                                    \
    if (peak_e_ == cudaErrorInvalidConfiguration || peak_e_ == cudaErrorLaunchOutOfResources) \
      peak_invalid_config();                                                           \
    PEAK_CUDA_CHECK(peak_e_);                                                          \
  } while (0)

#define PEAK_ARRAY_DECL(name, type) static type* peak_h_##name; static type* peak_d_##name;
#define PEAK_ARRAY_ALLOC(name, type, count)                                        \
  peak_h_##name = (type*)peak_host_alloc(sizeof(type) * (size_t)(count));          \
  PEAK_CUDA_CHECK(cudaMalloc((void**)&peak_d_##name, sizeof(type) * (size_t)(count)));
#define PEAK_ARRAY_UPLOAD(name, type, count) \
  PEAK_CUDA_CHECK(cudaMemcpy(peak_d_##name, peak_h_##name, sizeof(type) * (size_t)(count), cudaMemcpyHostToDevice));
#define PEAK_ARRAY_DOWNLOAD(name, type, count) \
  PEAK_CUDA_CHECK(cudaMemcpy(peak_h_##name, peak_d_##name, sizeof(type) * (size_t)(count), cudaMemcpyDeviceToHost));
#define PEAK_HOST(name) peak_h_##name
#define PEAK_ARG(name) peak_d_##name
#define PEAK_SYNC() PEAK_CUDA_CHECK(cudaDeviceSynchronize())

#endif
