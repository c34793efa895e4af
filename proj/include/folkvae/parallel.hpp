#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace folkvae {

// Splits [0, n) into one contiguous chunk per worker and runs fn(begin, end,
// worker_index). Workers write only worker-indexed buffers, so callers get
// identical results for every thread count as long as they reduce the
// buffers in index order.
inline void parallel_chunks(int n, int threads,
                            const std::function<void(int, int, int)>& fn) {
    if (threads <= 0) threads = int(std::thread::hardware_concurrency());
    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        if (n > 0) fn(0, n, 0);
        return;
    }
    const int base = n / threads, rem = n % threads;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    int begin = 0;
    for (int w = 0; w < threads; ++w) {
        const int len = base + (w < rem ? 1 : 0);
        const int end = begin + len;
        pool.emplace_back([=, &fn] { if (len > 0) fn(begin, end, w); });
        begin = end;
    }
    for (auto& t : pool) t.join();
}

} // namespace folkvae
