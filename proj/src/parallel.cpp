#include "mergectx/parallel.hpp"

#include <chrono>
#include <deque>
#include <thread>

namespace mergectx {

namespace {

class ThreadCache {
public:
    void submit(std::function<void()> job) {
        std::unique_lock lock(mu_);
        jobs_.push_back(std::move(job));
        if (idle_ >= jobs_.size()) {
            lock.unlock();
            cv_.notify_one();
            return;
        }
        lock.unlock();
        std::thread([this] { loop(); }).detach();
    }

private:
    void loop() {
        std::unique_lock lock(mu_);
        for (;;) {
            if (jobs_.empty()) {
                ++idle_;
                const bool woke = cv_.wait_for(lock, std::chrono::seconds(10), [this] { return !jobs_.empty(); });
                --idle_;
                if (!woke) return;
            }
            auto job = std::move(jobs_.front());
            jobs_.pop_front();
            lock.unlock();
            job();
            lock.lock();
        }
    }

    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::function<void()>> jobs_;
    std::size_t idle_ = 0;
};

ThreadCache& cache() {
    // Never destroyed: detached workers may still be waiting at exit.
    static auto* c = new ThreadCache;
    return *c;
}

} // namespace

void run_detached(std::function<void()> job) { cache().submit(std::move(job)); }

} // namespace mergectx
