#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <thread>
#include <vector>

namespace fir {

/// Thread cap for internal parallelism, read once from FRACTAL_IR_THREADS.
/// Defaults to 1 so all reductions run in a fixed serial order.
inline int thread_cap() {
  static const int cap = [] {
    const char* env = std::getenv("FRACTAL_IR_THREADS");
    if (env == nullptr) return 1;
    const long v = std::strtol(env, nullptr, 10);
    if (v < 1) return 1;
    const long hw = static_cast<long>(std::thread::hardware_concurrency());
    return static_cast<int>(std::min(v, std::max(hw, 1l)));
  }();
  return cap;
}

/// Static-partition parallel loop over [0, n). Each index is processed by
/// exactly one worker with an unchanged per-index reduction order, so the
/// result is bitwise identical for any thread count.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
  const int threads = thread_cap();
  if (threads <= 1 || n < 2) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = static_cast<int>(std::min<std::int64_t>(threads, n));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::int64_t lo = w * chunk;
    const std::int64_t hi = std::min(n, lo + chunk);
    pool.emplace_back([lo, hi, &fn] {
      for (std::int64_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace fir
