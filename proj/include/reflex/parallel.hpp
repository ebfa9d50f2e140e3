#pragma once

#include <cstddef>
#include <exception>
#include <vector>

namespace reflex {

/// Runs fn(i) for i in [0, n) on `workers` OpenMP threads. fn must only
/// write to slots owned by index i. If any call throws, the exception from
/// the lowest index is rethrown after the loop.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 1) num_threads(workers > 0 ? workers : 1)
  for (long long i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e)
      std::rethrow_exception(e);
}

/// Worker count from REFLEX_WORKERS, else the OpenMP default.
int default_workers();

} // namespace reflex
