#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace kvshare {

// Fan-out width for per-sentence work. KVSHARE_THREADS caps it; the default
// is machine parallelism.
inline int64_t worker_count(int64_t jobs) {
  int64_t cap = static_cast<int64_t>(std::thread::hardware_concurrency());
  if (cap < 1) cap = 1;
  if (const char* env = std::getenv("KVSHARE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) cap = static_cast<int64_t>(v);
  }
  return std::max<int64_t>(1, std::min(jobs, cap));
}

// Runs fn(i) for i in [0, n). Workers take contiguous chunks; callers store
// per-index results and reduce in index order afterwards, which keeps every
// aggregate deterministic regardless of scheduling.
template <typename Fn>
void parallel_for_index(int64_t n, Fn&& fn) {
  const int64_t workers = worker_count(n);
  if (workers <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(workers));
  const int64_t chunk = (n + workers - 1) / workers;
  for (int64_t w = 0; w < workers; ++w) {
    const int64_t lo = w * chunk;
    const int64_t hi = std::min(n, lo + chunk);
    threads.emplace_back([&, w, lo, hi] {
      try {
        for (int64_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace kvshare
