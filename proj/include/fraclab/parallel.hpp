#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace fraclab {

// Worker count for data-parallel loops.  The FRAC_THREADS environment
// variable overrides hardware concurrency; values < 1 are ignored.
inline unsigned thread_count() {
    if (const char* env = std::getenv("FRAC_THREADS")) {
        char* end = nullptr;
        const long n = std::strtol(env, &end, 10);
        if (end != env && n >= 1 && n <= 1024) return static_cast<unsigned>(n);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1u;
}

// Runs f(i) for i in [0, n).  Work is split into contiguous blocks, one per
// worker; each index is processed by exactly one thread, so results written
// to disjoint slots are deterministic regardless of the worker count.
template <class F>
void parallel_for(std::size_t n, F&& f) {
    const unsigned workers =
        static_cast<unsigned>(std::min<std::size_t>(thread_count(), n ? n : 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &f] {
            for (std::size_t i = lo; i < hi; ++i) f(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace fraclab
