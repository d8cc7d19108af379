#pragma once

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fedgrid {

// Global worker-thread cap for the OpenMP kernels. 0 = use all hardware
// threads. The kernels are bitwise deterministic for any thread count: random
// draws happen serially before parallel regions and per-sample results are
// reduced in fixed sample order.
int parallel_threads();
void set_parallel_threads(int n);

// Effective thread count for a loop of n independent items.
int threads_for(int n);

template <typename F>
void parallel_for(int n, F&& body) {
#ifdef _OPENMP
    int nt = threads_for(n);
    if (nt > 1) {
#pragma omp parallel for schedule(static) num_threads(nt)
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
#endif
    for (int i = 0; i < n; ++i) body(i);
}

// Serial reference path: always a plain loop, kept for testing and for the
// kernel benchmark to compare against.
template <typename F>
void serial_for(int n, F&& body) {
    for (int i = 0; i < n; ++i) body(i);
}

}  // namespace fedgrid
