#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "bsnmani/errors.hpp"

namespace bsnmani {

// Worker cap: the BSNMANI_THREADS environment variable when set (>= 1),
// otherwise the logical core count.  Read at call time so tests and callers
// can retarget without rebuilding anything.
inline int thread_cap() {
  if (const char* env = std::getenv("BSNMANI_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
      throw ConfigurationError("BSNMANI_THREADS must be a positive integer");
    }
    return static_cast<int>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(i) for i in [0, n) across at most thread_cap() workers.  Callers
// must write results into per-index slots: execution order is unspecified,
// but indexed collection makes the assembled output independent of
// scheduling, which is what keeps parallel runs byte-identical to serial
// ones.  The first exception (in index order) is rethrown after all workers
// finish.
template <typename Fn>
inline void parallel_for(int n, Fn&& fn) {
  if (n <= 0) return;
  const int workers = std::min(thread_cap(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace bsnmani
