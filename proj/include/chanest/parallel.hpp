#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace chanest {

inline int default_threads() {
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Static contiguous partition of [0, n) over `threads` workers. The chunking
/// is a pure function of (n, threads), so per-chunk reductions can be merged
/// in chunk order for reproducible results.
template <typename Fn>
inline void parallel_chunks(std::size_t n, int threads, Fn&& fn) {
    if (threads <= 0) threads = default_threads();
    const std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(threads), n ? n : 1);
    if (t <= 1) {
        fn(std::size_t{0}, std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(t);
    const std::size_t base = n / t;
    const std::size_t rem = n % t;
    std::size_t begin = 0;
    for (std::size_t w = 0; w < t; ++w) {
        const std::size_t len = base + (w < rem ? 1 : 0);
        const std::size_t end = begin + len;
        pool.emplace_back([&fn, w, begin, end]() { fn(w, begin, end); });
        begin = end;
    }
    for (auto& th : pool) th.join();
}

}  // namespace chanest
