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

/* Direct3D 12 glue for generated drivers. The device region is an HLSL
 * compute shader (peak_device.hlsl) compiled at startup; arrays are bound
 * as UAVs u0..uN in launch-argument order and scalars as root constants.
 * Host code calls PEAK_LAUNCH(entry, grid, block, ...) where `block`
 * must match the shader's [numthreads] attribute. */
#ifndef PEAK_RUNTIME_H
#define PEAK_RUNTIME_H

#include <d3d12.h>
#include <d3dcompiler.h>
#include <dxgi1_6.h>
#include <wrl/client.h>

#include "peak_common.h"

#ifndef PEAK_MAX_THREADS_PER_BLOCK
#define PEAK_MAX_THREADS_PER_BLOCK 256
#endif

using Microsoft::WRL::ComPtr;

struct dim3 {
  unsigned x, y, z;
  dim3(unsigned x_ = 1, unsigned y_ = 1, unsigned z_ = 1) : x(x_), y(y_), z(z_) {}
};

#define PEAK_HR(expr)                                                      \
  do {                                                                     \
    HRESULT peak_hr_ = (expr);                                             \
    if (FAILED(peak_hr_)) {                                                \
      fprintf(stderr, "%s:%d: HRESULT 0x%08lx\n", __FILE__, __LINE__, (unsigned long)peak_hr_); \
      exit(2);                                                             \
    }                                                                      \
  } while (0)

struct peak_buffer {
  ComPtr<ID3D12Resource> gpu;
  ComPtr<ID3D12Resource> upload;
  ComPtr<ID3D12Resource> readback;
  size_t bytes;
};

struct peak_d3d {
  ComPtr<ID3D12Device> device;
  ComPtr<ID3D12CommandQueue> queue;
  ComPtr<ID3D12CommandAllocator> allocator;
  ComPtr<ID3D12GraphicsCommandList> list;
  ComPtr<ID3D12Fence> fence;
  UINT64 fence_value = 0;
  HANDLE fence_event = nullptr;
};

static peak_d3d peak_ctx;

static void peak_d3d_init(void) {
  if (peak_ctx.device) return;
  PEAK_HR(D3D12CreateDevice(nullptr, D3D_FEATURE_LEVEL_12_0, IID_PPV_ARGS(&peak_ctx.device)));
  D3D12_COMMAND_QUEUE_DESC q = {};
  q.Type = D3D12_COMMAND_LIST_TYPE_COMPUTE;
  PEAK_HR(peak_ctx.device->CreateCommandQueue(&q, IID_PPV_ARGS(&peak_ctx.queue)));
  PEAK_HR(peak_ctx.device->CreateCommandAllocator(D3D12_COMMAND_LIST_TYPE_COMPUTE, IID_PPV_ARGS(&peak_ctx.allocator)));
  PEAK_HR(peak_ctx.device->CreateCommandList(0, D3D12_COMMAND_LIST_TYPE_COMPUTE, peak_ctx.allocator.Get(), nullptr,
                                             IID_PPV_ARGS(&peak_ctx.list)));
  PEAK_HR(peak_ctx.list->Close());
  PEAK_HR(peak_ctx.device->CreateFence(0, D3D12_FENCE_FLAG_NONE, IID_PPV_ARGS(&peak_ctx.fence)));
  peak_ctx.fence_event = CreateEvent(nullptr, FALSE, FALSE, nullptr);
}

static void peak_d3d_wait(void) {
  PEAK_HR(peak_ctx.queue->Signal(peak_ctx.fence.Get(), ++peak_ctx.fence_value));
  if (peak_ctx.fence->GetCompletedValue() < peak_ctx.fence_value) {
    PEAK_HR(peak_ctx.fence->SetEventOnCompletion(peak_ctx.fence_value, peak_ctx.fence_event));
    WaitForSingleObject(peak_ctx.fence_event, INFINITE);
  }
}

static ComPtr<ID3D12Resource> peak_d3d_buffer(size_t bytes, D3D12_HEAP_TYPE heap, D3D12_RESOURCE_FLAGS flags,
                                              D3D12_RESOURCE_STATES state) {
  D3D12_HEAP_PROPERTIES hp = {};
  hp.Type = heap;
  D3D12_RESOURCE_DESC d = {};
  d.Dimension = D3D12_RESOURCE_DIMENSION_BUFFER;
  d.Width = bytes ? bytes : 4;
  d.Height = 1;
  d.DepthOrArraySize = 1;
  d.MipLevels = 1;
  d.SampleDesc.Count = 1;
  d.Layout = D3D12_TEXTURE_LAYOUT_ROW_MAJOR;
  d.Flags = flags;
  ComPtr<ID3D12Resource> r;
  PEAK_HR(peak_ctx.device->CreateCommittedResource(&hp, D3D12_HEAP_FLAG_NONE, &d, state, nullptr, IID_PPV_ARGS(&r)));
  return r;
}

static void peak_d3d_alloc(peak_buffer* b, size_t bytes) {
  peak_d3d_init();
  b->bytes = bytes;
  b->gpu = peak_d3d_buffer(bytes, D3D12_HEAP_TYPE_DEFAULT, D3D12_RESOURCE_FLAG_ALLOW_UNORDERED_ACCESS,
                           D3D12_RESOURCE_STATE_COMMON);
  b->upload = peak_d3d_buffer(bytes, D3D12_HEAP_TYPE_UPLOAD, D3D12_RESOURCE_FLAG_NONE,
                              D3D12_RESOURCE_STATE_GENERIC_READ);
  b->readback = peak_d3d_buffer(bytes, D3D12_HEAP_TYPE_READBACK, D3D12_RESOURCE_FLAG_NONE,
                                D3D12_RESOURCE_STATE_COPY_DEST);
}

static void peak_d3d_copy(peak_buffer* b, const void* host, void* out) {
  void* mapped = nullptr;
  if (host) {
    PEAK_HR(b->upload->Map(0, nullptr, &mapped));
    memcpy(mapped, host, b->bytes);
    b->upload->Unmap(0, nullptr);
  }
  PEAK_HR(peak_ctx.allocator->Reset());
  PEAK_HR(peak_ctx.list->Reset(peak_ctx.allocator.Get(), nullptr));
  if (host) {
    peak_ctx.list->CopyResource(b->gpu.Get(), b->upload.Get());
  } else {
    peak_ctx.list->CopyResource(b->readback.Get(), b->gpu.Get());
  }
  PEAK_HR(peak_ctx.list->Close());
  ID3D12CommandList* lists[] = {peak_ctx.list.Get()};
  peak_ctx.queue->ExecuteCommandLists(1, lists);
  peak_d3d_wait();
  if (out) {
    PEAK_HR(b->readback->Map(0, nullptr, &mapped));
    memcpy(out, mapped, b->bytes);
    b->readback->Unmap(0, nullptr);
  }
}

struct peak_pipeline {
  ComPtr<ID3D12RootSignature> root;
  ComPtr<ID3D12PipelineState> pso;
};

/* Root signature: one UAV root descriptor per array, then 32-bit constants. */
static peak_pipeline peak_d3d_pipeline(const char* entry, unsigned uavs, unsigned constants) {
  peak_pipeline p;
  D3D12_ROOT_PARAMETER params[16] = {};
  for (unsigned i = 0; i < uavs; ++i) {
    params[i].ParameterType = D3D12_ROOT_PARAMETER_TYPE_UAV;
    params[i].Descriptor.ShaderRegister = i;
  }
  if (constants) {
    params[uavs].ParameterType = D3D12_ROOT_PARAMETER_TYPE_32BIT_CONSTANTS;
    params[uavs].Constants.Num32BitValues = constants;
  }
  D3D12_ROOT_SIGNATURE_DESC rs = {};
  rs.NumParameters = uavs + (constants ? 1 : 0);
  rs.pParameters = params;
  ComPtr<ID3DBlob> blob, err;
  PEAK_HR(D3D12SerializeRootSignature(&rs, D3D_ROOT_SIGNATURE_VERSION_1, &blob, &err));
  PEAK_HR(peak_ctx.device->CreateRootSignature(0, blob->GetBufferPointer(), blob->GetBufferSize(),
                                               IID_PPV_ARGS(&p.root)));
  ComPtr<ID3DBlob> cs;
  if (FAILED(D3DCompileFromFile(L"peak_device.hlsl", nullptr, D3D_COMPILE_STANDARD_FILE_INCLUDE, entry, "cs_5_1", 0, 0,
                                &cs, &err))) {
    fprintf(stderr, "%s\n", err ? (const char*)err->GetBufferPointer() : "shader compilation failed");
    exit(2);
  }
  D3D12_COMPUTE_PIPELINE_STATE_DESC pd = {};
  pd.pRootSignature = p.root.Get();
  pd.CS = {cs->GetBufferPointer(), cs->GetBufferSize()};
  PEAK_HR(peak_ctx.device->CreateComputePipelineState(&pd, IID_PPV_ARGS(&p.pso)));
  return p;
}

static void peak_d3d_dispatch(const peak_pipeline& p, peak_buffer** uavs, unsigned n_uavs, const uint32_t* constants,
                              unsigned n_constants, dim3 grid) {
  PEAK_HR(peak_ctx.allocator->Reset());
  PEAK_HR(peak_ctx.list->Reset(peak_ctx.allocator.Get(), p.pso.Get()));
  peak_ctx.list->SetComputeRootSignature(p.root.Get());
  for (unsigned i = 0; i < n_uavs; ++i) {
    peak_ctx.list->SetComputeRootUnorderedAccessView(i, uavs[i]->gpu->GetGPUVirtualAddress());
  }
  if (n_constants) peak_ctx.list->SetComputeRoot32BitConstants(n_uavs, n_constants, constants, 0);
  peak_ctx.list->Dispatch(grid.x, grid.y, grid.z);
  PEAK_HR(peak_ctx.list->Close());
  ID3D12CommandList* lists[] = {peak_ctx.list.Get()};
  peak_ctx.queue->ExecuteCommandLists(1, lists);
  peak_d3d_wait();
}

#define PEAK_INVALID_CONFIG() peak_invalid_config()
#define PEAK_ARRAY_DECL(name, type) static type* peak_h_##name; static peak_buffer peak_d_##name;
#define PEAK_ARRAY_ALLOC(name, type, count)                               \
  peak_h_##name = (type*)peak_host_alloc(sizeof(type) * (size_t)(count)); \
  peak_d3d_alloc(&peak_d_##name, sizeof(type) * (size_t)(count));
#define PEAK_ARRAY_UPLOAD(name, type, count) peak_d3d_copy(&peak_d_##name, peak_h_##name, nullptr);
#define PEAK_ARRAY_DOWNLOAD(name, type, count) peak_d3d_copy(&peak_d_##name, nullptr, peak_h_##name);
#define PEAK_HOST(name) peak_h_##name
#define PEAK_ARG(name) (&peak_d_##name)
#define PEAK_SYNC()

#endif
