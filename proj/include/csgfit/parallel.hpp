// parallel.hpp - small block-parallel helper with a global worker cap.
//
// Work is always decomposed into blocks whose boundaries do not depend on the
// worker count, so any reduction that combines per-block results in a fixed
// order is bit-stable across thread counts. Nested calls run inline on the
// calling thread, which keeps ensemble-level and sample-level parallelism from
// oversubscribing each other.
#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace csgfit {

inline int default_worker_count() {
    if (const char* env = std::getenv("CSGFIT_WORKERS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

inline int& worker_count() {
    static int count = default_worker_count();
    return count;
}

inline void set_worker_count(int n) { worker_count() = n < 1 ? 1 : n; }

namespace detail {
inline bool& in_parallel_region() {
    thread_local bool flag = false;
    return flag;
}
}  // namespace detail

// Runs fn(block_index) for block_index in [0, n_blocks).
template <typename Fn>
void parallel_blocks(std::size_t n_blocks, Fn&& fn) {
    const int workers = worker_count();
    if (n_blocks == 0) return;
    if (workers <= 1 || n_blocks == 1 || detail::in_parallel_region()) {
        for (std::size_t b = 0; b < n_blocks; ++b) fn(b);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        detail::in_parallel_region() = true;
        try {
            for (;;) {
                const std::size_t b = next.fetch_add(1, std::memory_order_relaxed);
                if (b >= n_blocks) break;
                fn(b);
            }
        } catch (...) {
            const std::lock_guard<std::mutex> lock(error_mutex);
            if (!error) error = std::current_exception();
            next.store(n_blocks, std::memory_order_relaxed);  // drain remaining work
        }
        detail::in_parallel_region() = false;
    };
    const std::size_t n_threads =
        std::min<std::size_t>(static_cast<std::size_t>(workers), n_blocks);
    std::vector<std::thread> pool;
    pool.reserve(n_threads - 1);
    for (std::size_t i = 1; i < n_threads; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

// Splits [0, n) into fixed-size blocks and runs fn(begin, end) per block.
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t block_size, Fn&& fn) {
    if (n == 0) return;
    const std::size_t n_blocks = (n + block_size - 1) / block_size;
    parallel_blocks(n_blocks, [&](std::size_t b) {
        const std::size_t begin = b * block_size;
        const std::size_t end = std::min(n, begin + block_size);
        fn(begin, end);
    });
}

}  // namespace csgfit
