// SPDX-License-Identifier: Apache-2.0
#include <cnnlab/parallel.hpp>

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace cnnlab {

std::size_t default_threads() {
  if (const char* env = std::getenv("CNNLAB_THREADS")) {
    try {
      long v = std::stol(env);
      if (v > 0)
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads <= 1) {
    if (n > 0)
      fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi)
      break;
    pool.emplace_back([&, t, lo, hi] {
      try {
        fn(lo, hi);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool)
    th.join();
  for (auto& e : errors)
    if (e)
      std::rethrow_exception(e);
}

} // namespace cnnlab
