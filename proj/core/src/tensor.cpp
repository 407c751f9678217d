// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#include "ctxisp/tensor.hpp"

#include <mutex>
#include <new>
#include <unordered_map>

namespace ctxisp::detail {
namespace {

constexpr size_t kAlign = 64;
constexpr size_t kPoolCapBytes = size_t(1536) << 20;

struct Pool {
  std::mutex mu;
  std::unordered_map<size_t, std::vector<void*>> free_lists;
  size_t cached_bytes = 0;
};

Pool& pool() {
  static Pool* p = new Pool;  // leaked intentionally: outlives all tensors
  return *p;
}

}  // namespace

void* pool_acquire(size_t bytes) {
  if (bytes == 0) bytes = kAlign;
  Pool& p = pool();
  {
    std::lock_guard<std::mutex> lock(p.mu);
    auto it = p.free_lists.find(bytes);
    if (it != p.free_lists.end() && !it->second.empty()) {
      void* buf = it->second.back();
      it->second.pop_back();
      p.cached_bytes -= bytes;
      return buf;
    }
  }
  return ::operator new(bytes, std::align_val_t(kAlign));
}

void pool_release(void* buf, size_t bytes) {
  if (!buf) return;
  if (bytes == 0) bytes = kAlign;
  Pool& p = pool();
  {
    std::lock_guard<std::mutex> lock(p.mu);
    if (p.cached_bytes + bytes <= kPoolCapBytes) {
      p.free_lists[bytes].push_back(buf);
      p.cached_bytes += bytes;
      return;
    }
  }
  ::operator delete(buf, std::align_val_t(kAlign));
}

}  // namespace ctxisp::detail
