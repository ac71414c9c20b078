#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace hsbi {

// Worker count: HSBI_WORKERS env var, else hardware concurrency.
inline int worker_count(int requested = 0) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("HSBI_WORKERS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

// Runs fn(first, last, worker_index) over contiguous index chunks. Results
// must be reduced by the caller in worker order for determinism.
inline void parallel_chunks(long n, int workers, const std::function<void(long, long, int)>& fn) {
    if (n <= 0) return;
    workers = std::max(1, std::min<long>(workers, n) > 0 ? std::min<int>(workers, static_cast<int>(n)) : 1);
    if (workers == 1) {
        fn(0, n, 0);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    const long base = n / workers, rem = n % workers;
    long start = 0;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        const long count = base + (w < rem ? 1 : 0);
        const long first = start, last = start + count;
        start = last;
        pool.emplace_back([&, first, last, w] {
            try {
                fn(first, last, w);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace hsbi
