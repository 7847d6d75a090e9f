#pragma once

#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace comet {

inline int default_threads() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Static contiguous chunking; fn(worker, index). Chunk boundaries depend on
// the thread count but callers that need run-to-run determinism accumulate
// per-index results and reduce in index order.
inline void parallel_for(int n, int threads, const std::function<void(int, int)>& fn) {
    if (threads <= 0) threads = default_threads();
    if (threads > n) threads = n < 1 ? 1 : n;
    if (threads == 1) {
        for (int i = 0; i < n; ++i) fn(0, i);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr first_error = nullptr;
    std::mutex err_mutex;
    for (int w = 0; w < threads; ++w) {
        const int lo = static_cast<int>(static_cast<long long>(n) * w / threads);
        const int hi = static_cast<int>(static_cast<long long>(n) * (w + 1) / threads);
        pool.emplace_back([&, w, lo, hi] {
            try {
                for (int i = lo; i < hi; ++i) fn(w, i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace comet
