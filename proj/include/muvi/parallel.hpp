#pragma once

#include <cstdint>
#include <cstdlib>
#include <thread>
#include <vector>

namespace muvi {

/// Worker count: MUVI_THREADS if set, else hardware concurrency.
inline int thread_count() {
  static const int n = [] {
    if (const char* env = std::getenv("MUVI_THREADS")) {
      const int v = std::atoi(env);
      if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
  }();
  return n;
}

/// Runs fn(i) for i in [0, n), split into contiguous chunks per worker.
///
/// Each index is processed by exactly one worker, so any computation that
/// writes only to index-owned outputs is bit-deterministic regardless of
/// the worker count.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
  if (n <= 0) return;
  const int workers = thread_count();
  if (workers <= 1 || n == 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const int used = static_cast<int>(std::min<std::int64_t>(workers, n));
  const std::int64_t chunk = (n + used - 1) / used;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(used));
  for (int w = 0; w < used; ++w) {
    const std::int64_t lo = w * chunk;
    const std::int64_t hi = std::min<std::int64_t>(lo + chunk, n);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::int64_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace muvi
