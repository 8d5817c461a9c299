#ifndef DTA_PARALLEL_HPP
#define DTA_PARALLEL_HPP

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace dta {

/// Worker count: DTA_THREADS if set (>=1), else 1. Results never depend on
/// the thread count — parallel loops write to disjoint pre-sized slots.
inline int thread_count() {
    if (const char* env = std::getenv("DTA_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

/// Run body(k) for k in [0, n), chunked across threads.
inline void parallel_for(int n, const std::function<void(int)>& body) {
    int workers = std::min(thread_count(), n);
    if (workers <= 1) {
        for (int k = 0; k < n; ++k) body(k);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (int k = w; k < n; k += workers) body(k);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace dta

#endif
