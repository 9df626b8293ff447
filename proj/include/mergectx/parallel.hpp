#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <vector>

namespace mergectx {

/// Hands jobs to idle cached threads, starting a new thread when none is idle.
/// Every submitted job gets its own thread, so jobs may block on each other.
/// Idle threads exit after a while.
void run_detached(std::function<void()> job);

/// Runs fn(0) .. fn(n-1) with at most `limit` calls in flight, the calling
/// thread included. Callers store results by index, so completion order never
/// matters. If any call throws, the exception from the lowest failing index is
/// rethrown after all workers finish; `completed[i]` tells which indices
/// succeeded.
template <class Fn>
void bounded_parallel_for(std::size_t n, std::size_t limit, Fn&& fn,
                          std::vector<bool>* completed = nullptr) {
    if (completed) completed->assign(n, false);
    if (n == 0) return;
    limit = std::max<std::size_t>(1, std::min(limit, n));

    std::vector<std::exception_ptr> errors(n);
    std::vector<char> done(n, 0);
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
                done[i] = 1;
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };

    std::mutex mu;
    std::condition_variable cv;
    std::size_t helpers_running = limit - 1;
    for (std::size_t t = 1; t < limit; ++t) {
        run_detached([&] {
            worker();
            std::lock_guard lock(mu);
            if (--helpers_running == 0) cv.notify_all();
        });
    }
    worker();
    {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return helpers_running == 0; });
    }

    if (completed) {
        for (std::size_t i = 0; i < n; ++i) (*completed)[i] = done[i] != 0;
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

} // namespace mergectx
