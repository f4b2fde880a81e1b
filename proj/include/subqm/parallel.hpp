#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace subqm {

// Worker count: SUBQM_THREADS if set (>= 1), else hardware concurrency.
inline int thread_count() {
  if (const char* s = std::getenv("SUBQM_THREADS")) {
    const int n = std::atoi(s);
    if (n >= 1) return n;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

// Run fn(begin, end) over a partition of [0, n). Results must be written to
// disjoint, preallocated slots so the outcome is independent of the worker
// count.
inline void parallel_for(int n, const std::function<void(int, int)>& fn) {
  const int workers = std::min(thread_count(), n > 0 ? n : 1);
  if (workers <= 1) {
    if (n > 0) fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const int chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int lo = w * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace subqm
