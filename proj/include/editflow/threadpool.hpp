// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace editflow {

// Static-partition fork/join pool. Work item i always lands on the same
// worker for a given (n, nthreads), which keeps float reductions order-stable
// and training bit-reproducible run to run.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool(default_threads());
        return pool;
    }

    static int default_threads() {
        if (const char* env = std::getenv("EDITFLOW_THREADS")) {
            int n = std::atoi(env);
            if (n >= 1) return n;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw);
    }

    explicit ThreadPool(int nthreads) : nthreads_(nthreads < 1 ? 1 : nthreads) {
        for (int t = 1; t < nthreads_; ++t) {
            workers_.emplace_back([this, t] { worker_loop(t); });
        }
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
            ++epoch_;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    int nthreads() const { return nthreads_; }

    // fn(thread_index, begin, end) over [0, n) split into nthreads_ chunks.
    // Serialized across callers so concurrent trainers (parallel ablation)
    // interleave safely.
    void parallel_chunks(int64_t n, const std::function<void(int, int64_t, int64_t)>& fn) {
        if (n <= 0) return;
        if (nthreads_ == 1 || n == 1) {
            fn(0, 0, n);
            return;
        }
        std::lock_guard<std::mutex> caller_lock(caller_mu_);
        task_ = &fn;
        task_n_ = n;
        pending_.store(nthreads_ - 1, std::memory_order_release);
        {
            std::lock_guard<std::mutex> lk(mu_);
            ++epoch_;
        }
        cv_.notify_all();
        run_chunk(0);
        // Spin briefly, then yield; chunks are microseconds to milliseconds.
        while (pending_.load(std::memory_order_acquire) != 0) {
            std::this_thread::yield();
        }
        task_ = nullptr;
    }

private:
    void run_chunk(int t) {
        int64_t n = task_n_;
        int64_t per = (n + nthreads_ - 1) / nthreads_;
        int64_t b = static_cast<int64_t>(t) * per;
        int64_t e = b + per < n ? b + per : n;
        if (b < e) (*task_)(t, b, e);
    }

    void worker_loop(int t) {
        uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [&] { return epoch_ != seen; });
                seen = epoch_;
                if (stop_) return;
            }
            run_chunk(t);
            pending_.fetch_sub(1, std::memory_order_acq_rel);
        }
    }

    int nthreads_;
    std::vector<std::thread> workers_;
    std::mutex caller_mu_;
    std::mutex mu_;
    std::condition_variable cv_;
    uint64_t epoch_ = 0;
    bool stop_ = false;
    const std::function<void(int, int64_t, int64_t)>* task_ = nullptr;
    int64_t task_n_ = 0;
    std::atomic<int> pending_{0};
};

// Convenience: fn(i) for i in [0, n), statically partitioned.
inline void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
    ThreadPool::instance().parallel_chunks(
        n, [&](int, int64_t b, int64_t e) {
            for (int64_t i = b; i < e; ++i) fn(i);
        });
}

} // namespace editflow
