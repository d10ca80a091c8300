#pragma once

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace pca {

/// Worker cap for batch-parallel kernels. Resolution order: explicit
/// set_num_threads() call, then the PCA_NUM_THREADS environment variable,
/// else 1. Results are bit-identical for every thread count because batch
/// items write disjoint outputs and shared reductions are summed in fixed
/// batch order afterwards.
inline int& num_threads_override() {
    static int v = 0;  // 0 = not set
    return v;
}

inline void set_num_threads(int n) { num_threads_override() = n > 0 ? n : 0; }

inline int num_threads() {
    if (num_threads_override() > 0) return num_threads_override();
    if (const char* env = std::getenv("PCA_NUM_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return 1;
}

/// Runs fn(i) for i in [0, count), split over contiguous chunks. With one
/// worker this degenerates to a plain loop.
template <typename Fn>
void parallel_for(int count, const Fn& fn) {
    const int workers = std::min(num_threads(), count);
    if (workers <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const int chunk = (count + workers - 1) / workers;
    for (int t = 0; t < workers; ++t) {
        const int lo = t * chunk;
        const int hi = std::min(count, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn]() {
            for (int i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace pca
