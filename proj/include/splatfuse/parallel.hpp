#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace splatfuse {

inline unsigned worker_count() {
  if (const char* env = std::getenv("SPLATFUSE_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return static_cast<unsigned>(n);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Runs f(i) for i in [0, n) across workers with a static partition.
/// Work item i always lands on worker i % workers, so any per-worker
/// accumulation reduced in worker order is deterministic.
template <typename F>
void parallel_for(int n, F&& f) {
  const unsigned workers = std::min<unsigned>(worker_count(), n > 0 ? n : 1);
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (int i = static_cast<int>(w); i < n; i += static_cast<int>(workers)) f(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace splatfuse
