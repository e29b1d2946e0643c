#pragma once

#include <cstddef>
#include <exception>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gphodlr {

/// Caps the number of worker threads used by assembly, factorization and the
/// estimator sums. Results never depend on this value: every parallel loop
/// writes disjoint outputs and reductions run in a fixed order afterwards.
inline void set_num_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

inline int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

/// Runs body(i) for i in [0, count) on the worker pool. If any iteration
/// throws, the exception from the lowest failing index is rethrown once the
/// loop finishes, so error reports do not depend on scheduling.
template <class Body>
void parallel_for(std::size_t count, Body&& body) {
#ifdef _OPENMP
  std::exception_ptr failure;
  long failed_index = -1;
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < static_cast<long>(count); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(gphodlr_parallel_for)
      {
        if (failed_index < 0 || i < failed_index) {
          failed_index = i;
          failure = std::current_exception();
        }
      }
    }
  }
  if (failure) std::rethrow_exception(failure);
#else
  for (std::size_t i = 0; i < count; ++i) body(i);
#endif
}

}  // namespace gphodlr
