#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace fillscape {

/// Thread cap from FILLSCAPE_THREADS, defaulting to the hardware count.
inline int thread_limit() {
  static int cached = [] {
    int hw = int(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    if (const char* env = std::getenv("FILLSCAPE_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v < hw ? v : hw;
    }
    return hw;
  }();
  return cached;
}

/// Runs f(i) for i in [0,n). Each index writes only its own slot, so the
/// result is identical for any thread count; reductions stay with the
/// caller in index order.
template <class F>
void parallel_for(int n, F&& f) {
  int threads = thread_limit();
  if (threads > n) threads = n;
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex err_mutex;
  auto worker = [&] {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace fillscape
