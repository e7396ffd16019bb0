#include "gvs/parallel.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <queue>
#include <thread>
#include <vector>

namespace gvs {

namespace {

thread_local bool t_inside_worker = false;

class Pool {
public:
    explicit Pool(int workers) {
        for (int i = 0; i < workers; ++i) {
            threads_.emplace_back([this] {
                t_inside_worker = true;
                for (;;) {
                    std::function<void()> task;
                    {
                        std::unique_lock<std::mutex> lock(mu_);
                        cv_.wait(lock, [this] { return stop_ || !tasks_.empty(); });
                        if (stop_ && tasks_.empty()) return;
                        task = std::move(tasks_.front());
                        tasks_.pop();
                    }
                    task();
                }
            });
        }
    }

    ~Pool() {
        {
            std::lock_guard<std::mutex> lock(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void submit(std::function<void()> task) {
        {
            std::lock_guard<std::mutex> lock(mu_);
            tasks_.push(std::move(task));
        }
        cv_.notify_one();
    }

private:
    std::vector<std::thread> threads_;
    std::queue<std::function<void()>> tasks_;
    std::mutex mu_;
    std::condition_variable cv_;
    bool stop_ = false;
};

int resolve_thread_count() {
    if (const char* env = std::getenv("GVS_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

Pool& pool() {
    static Pool p(resolve_thread_count());
    return p;
}

}  // namespace

int thread_count() {
    static const int n = resolve_thread_count();
    return n;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
    if (n <= 0) return;
    const int workers = thread_count();
    if (workers <= 1 || n == 1 || t_inside_worker) {
        fn(0, n);
        return;
    }
    const std::int64_t chunks = std::min<std::int64_t>(workers, n);
    const std::int64_t chunk = (n + chunks - 1) / chunks;

    std::mutex mu;
    std::condition_variable cv;
    std::int64_t remaining = chunks;

    for (std::int64_t c = 0; c < chunks; ++c) {
        const std::int64_t begin = c * chunk;
        const std::int64_t end = std::min(n, begin + chunk);
        pool().submit([&, begin, end] {
            fn(begin, end);
            std::lock_guard<std::mutex> lock(mu);
            if (--remaining == 0) cv.notify_one();
        });
    }
    std::unique_lock<std::mutex> lock(mu);
    cv.wait(lock, [&] { return remaining == 0; });
}

}  // namespace gvs
