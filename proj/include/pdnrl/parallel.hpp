#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace pdnrl {

// Worker count used by the per-frequency and per-record loops. 1 means
// strictly sequential execution on the calling thread.
std::size_t default_jobs();
void set_default_jobs(std::size_t jobs);

namespace detail {
// Set on pool workers; nested loops then run inline on that worker.
inline thread_local bool in_worker = false;
}  // namespace detail

// Calls fn(i) for i in [0, n). Each index writes only its own output slot,
// so the result does not depend on the worker count. The first exception
// thrown (lowest index) is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t jobs = default_jobs()) {
  jobs = std::min(jobs, n);
  if (jobs <= 1 || detail::in_worker) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex guard;
  std::size_t failed_at = n;
  std::exception_ptr failure;
  auto worker = [&] {
    const bool outer = detail::in_worker;
    detail::in_worker = true;
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(guard);
        if (i < failed_at) {
          failed_at = i;
          failure = std::current_exception();
        }
      }
    }
    detail::in_worker = outer;
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace pdnrl
