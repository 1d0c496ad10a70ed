#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace modarith {

inline std::size_t resolve_jobs(std::size_t jobs) {
    if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
    return jobs;
}

// Calls fn(i, worker) for i in [0, count) on up to `jobs` threads, with
// worker in [0, jobs). Work is pulled from a shared counter, so callers that
// write results by index get output independent of the thread count. The
// first exception (by index) is rethrown.
inline void parallel_for_workers(std::size_t count, std::size_t jobs,
                                 const std::function<void(std::size_t, std::size_t)>& fn) {
    jobs = std::min(resolve_jobs(jobs), count);
    if (jobs <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i, 0);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    auto worker = [&](std::size_t w) {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                fn(i, w);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker, t);
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

inline void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    parallel_for_workers(count, jobs, [&](std::size_t i, std::size_t) { fn(i); });
}

}  // namespace modarith
