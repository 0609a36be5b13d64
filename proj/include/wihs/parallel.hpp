// parallel.hpp — deterministic chunked map/reduce over an index range.
//
// Work is split into fixed chunks by index (independent of thread count);
// each chunk writes its partial into a dedicated slot and the slots are
// combined in chunk order, so results are bit-identical whether the loop
// runs on 1 thread or many.
#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace wihs {

inline unsigned hardware_threads() {
    unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : n;
}

/// fn(chunk_index, begin, end) over [0, n) in chunks of `chunk` items.
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t chunk, Fn&& fn,
                     unsigned n_threads = hardware_threads()) {
    if (n == 0) return;
    const std::size_t n_chunks = (n + chunk - 1) / chunk;
    if (n_threads <= 1 || n_chunks <= 1) {
        for (std::size_t c = 0; c < n_chunks; ++c)
            fn(c, c * chunk, std::min(n, (c + 1) * chunk));
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t c = next.fetch_add(1);
            if (c >= n_chunks) break;
            fn(c, c * chunk, std::min(n, (c + 1) * chunk));
        }
    };
    std::vector<std::thread> pool;
    const unsigned use = static_cast<unsigned>(std::min<std::size_t>(n_threads, n_chunks));
    pool.reserve(use);
    for (unsigned t = 0; t < use; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

/// Deterministic sum reduction: partials[c] = sum of fn(i) over the chunk,
/// combined in chunk order.
template <typename T, typename Fn>
T parallel_sum(std::size_t n, std::size_t chunk, T zero, Fn&& per_index) {
    const std::size_t n_chunks = n == 0 ? 0 : (n + chunk - 1) / chunk;
    std::vector<T> partials(n_chunks, zero);
    parallel_chunks(n, chunk, [&](std::size_t c, std::size_t b, std::size_t e) {
        T acc = zero;
        for (std::size_t i = b; i < e; ++i) acc += per_index(i);
        partials[c] = acc;
    });
    T total = zero;
    for (const T& p : partials) total += p;
    return total;
}

} // namespace wihs
