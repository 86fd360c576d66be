#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace dtm::detail {

/// Runs fn(chunk_index) for chunk_index in [0, chunks) on up to `workers`
/// threads. Chunks are claimed dynamically; callers write results into
/// per-chunk slots so the outcome never depends on scheduling. The first
/// exception thrown by any chunk is rethrown on the calling thread.
template <class Fn>
void parallel_chunks(std::size_t chunks, unsigned workers, Fn&& fn) {
    const std::size_t threads = std::min<std::size_t>(std::max(1u, workers), chunks);
    if (threads <= 1) {
        for (std::size_t i = 0; i < chunks; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto run = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= chunks) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(chunks, std::memory_order_relaxed);
                return;
            }
        }
    };
    std::vector<std::jthread> pool;
    pool.reserve(threads - 1);
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(run);
    run();
    pool.clear();
    if (error) std::rethrow_exception(error);
}

}  // namespace dtm::detail
