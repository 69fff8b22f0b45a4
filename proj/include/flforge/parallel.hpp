#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace flforge::par {

inline int hardware_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

/// Serial reference loop. The OpenMP path must produce bit-identical results
/// to this one; tests compare the two directly.
template <class F>
void for_index_serial(std::int64_t n, F&& body) {
  for (std::int64_t i = 0; i < n; ++i) body(i);
}

/// Data-parallel loop over [0, n). Bodies must write only to slots owned by
/// their index; any cross-index reduction happens afterwards in index order,
/// which is what keeps multi-threaded runs bit-identical to threads=1.
template <class F>
void for_index(std::int64_t n, int threads, F&& body) {
#ifdef _OPENMP
  if (threads > 1 && n > 1) {
#pragma omp parallel for schedule(static) num_threads(threads)
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
  }
#endif
  (void)threads;
  for_index_serial(n, body);
}

}  // namespace flforge::par
