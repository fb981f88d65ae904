#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace dqkit {

// Work is cut into fixed-size blocks whose size does not depend on the thread
// count; per-block partials are combined in block order, so results are
// bit-identical for any number of threads.
inline constexpr std::int64_t kSessionBlock = 4096;

int resolve_threads(int requested);

inline std::int64_t block_count(std::int64_t n, std::int64_t block = kSessionBlock) {
    return n <= 0 ? 0 : (n + block - 1) / block;
}

template <class F>
void parallel_for_blocks(std::int64_t n_blocks, int threads, F&& body) {
    threads = resolve_threads(threads);
    if (threads <= 1 || n_blocks <= 1) {
        for (std::int64_t b = 0; b < n_blocks; ++b) body(b);
        return;
    }
    std::atomic<std::int64_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto worker = [&] {
        while (true) {
            const std::int64_t b = next.fetch_add(1);
            if (b >= n_blocks) return;
            try {
                body(b);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!error) error = std::current_exception();
                next.store(n_blocks);
            }
        }
    };
    std::vector<std::thread> pool;
    const auto n_workers = static_cast<std::int64_t>(threads) < n_blocks ? threads : static_cast<int>(n_blocks);
    for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

// Fixed-shape pairwise tree over the partials.
template <class T, class Combine>
T pairwise_reduce(std::vector<T> parts, Combine&& combine) {
    if (parts.empty()) return T{};
    while (parts.size() > 1) {
        std::vector<T> next;
        next.reserve((parts.size() + 1) / 2);
        for (size_t i = 0; i + 1 < parts.size(); i += 2) {
            combine(parts[i], parts[i + 1]);
            next.push_back(std::move(parts[i]));
        }
        if (parts.size() % 2 == 1) next.push_back(std::move(parts.back()));
        parts = std::move(next);
    }
    return std::move(parts.front());
}

// Runs body(block, partial) over all blocks, a fixed-size wave at a time, and
// folds each wave's partials into the total with pairwise_reduce. Only `wave`
// partials are alive at once and the combination order depends on n_blocks
// and wave alone.
template <class T, class Make, class Body, class Combine>
T blocked_reduce(std::int64_t n_blocks, int threads, Make&& make, Body&& body, Combine&& combine,
                 std::int64_t wave = 32) {
    T total = make();
    for (std::int64_t w0 = 0; w0 < n_blocks; w0 += wave) {
        const std::int64_t w1 = n_blocks < w0 + wave ? n_blocks : w0 + wave;
        std::vector<T> parts;
        parts.reserve(static_cast<size_t>(w1 - w0));
        for (std::int64_t b = w0; b < w1; ++b) parts.push_back(make());
        parallel_for_blocks(w1 - w0, threads, [&](std::int64_t b) { body(w0 + b, parts[static_cast<size_t>(b)]); });
        T part = pairwise_reduce(std::move(parts), combine);
        combine(total, part);
    }
    return total;
}

}  // namespace dqkit
