#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace cmdp {

/// Worker count: explicit request if positive, else CMDP_PD_WORKERS, else 1.
inline int resolve_workers(int requested = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CMDP_PD_WORKERS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

/// Calls fn(i) for i in [0, n) on up to `workers` threads with static
/// contiguous chunks. The first exception thrown by any task is rethrown.
template <typename Fn>
void parallel_for(long n, int workers, Fn&& fn) {
  if (n <= 0) return;
  const long w = std::max(1L, std::min<long>(workers, n));
  if (w == 1) {
    for (long i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex guard;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(w));
  for (long t = 0; t < w; ++t) {
    const long begin = n * t / w;
    const long end = n * (t + 1) / w;
    pool.emplace_back([&, begin, end] {
      try {
        for (long i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(guard);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace cmdp
