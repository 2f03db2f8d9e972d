#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace eloss {

inline unsigned default_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1u : n;
}

/// Calls f(i) for i in [0, n). Work is handed out in blocks; callers store results
/// by index so the outcome does not depend on scheduling.
template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& f) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    constexpr std::size_t kBlock = 64;
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t lo = next.fetch_add(kBlock);
            if (lo >= n) return;
            const std::size_t hi = std::min(n, lo + kBlock);
            try {
                for (std::size_t i = lo; i < hi; ++i) f(i);
            } catch (...) {
                std::lock_guard lock(err_mutex);
                if (!err) err = std::current_exception();
                next.store(n);
                return;
            }
        }
    };
    const unsigned k = static_cast<unsigned>(std::min<std::size_t>(threads, (n + kBlock - 1) / kBlock));
    std::vector<std::thread> pool;
    pool.reserve(k);
    for (unsigned i = 0; i < k; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

/// Fixed-shape pairwise summation.
inline double pairwise_sum(const double* x, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

inline double pairwise_sum(const std::vector<double>& x) { return pairwise_sum(x.data(), x.size()); }

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

/// Sample mean and standard error (n-1 variance), two passes.
inline MeanSe mean_se(const std::vector<double>& x) {
    MeanSe r;
    const std::size_t n = x.size();
    if (n == 0) return r;
    r.mean = pairwise_sum(x) / static_cast<double>(n);
    if (n < 2) return r;
    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) sq[i] = (x[i] - r.mean) * (x[i] - r.mean);
    r.se = std::sqrt(pairwise_sum(sq) / static_cast<double>(n - 1) / static_cast<double>(n));
    return r;
}

}  // namespace eloss
