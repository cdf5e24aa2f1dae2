#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace rtgs {

/// Worker count: `RTGS_THREADS` when set, otherwise the hardware concurrency.
inline int worker_count() {
  if (const char* env = std::getenv("RTGS_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (...) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace detail {

class ThreadPool {
 public:
  explicit ThreadPool(int n) {
    for (int i = 1; i < n; ++i) workers_.emplace_back([this] { run(); });
  }
  ~ThreadPool() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }
  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int size() const { return static_cast<int>(workers_.size()) + 1; }

  // Runs job(i) for i in [0, n); the calling thread participates.
  void run_chunks(int n, const std::function<void(int)>& job) {
    std::unique_lock lock(mu_);
    job_ = &job;
    next_ = 0;
    total_ = n;
    pending_ = n;
    ++generation_;
    lock.unlock();
    cv_.notify_all();
    drain();
    lock.lock();
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    job_ = nullptr;
  }

 private:
  void drain() {
    for (;;) {
      int i;
      const std::function<void(int)>* job;
      {
        std::lock_guard lock(mu_);
        if (job_ == nullptr || next_ >= total_) return;
        i = next_++;
        job = job_;
      }
      (*job)(i);
      std::lock_guard lock(mu_);
      if (--pending_ == 0) done_cv_.notify_all();
    }
  }

  void run() {
    unsigned seen = 0;
    for (;;) {
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
      }
      drain();
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(int)>* job_ = nullptr;
  int next_ = 0, total_ = 0, pending_ = 0;
  unsigned generation_ = 0;
  bool stop_ = false;
};

inline ThreadPool& pool() {
  static ThreadPool p(worker_count());
  return p;
}

}  // namespace detail

/// Calls fn(i) for every i in [0, n). Work items must write disjoint outputs;
/// results are therefore independent of the worker count.
template <typename F>
void parallel_for(int n, F&& fn) {
  if (n <= 0) return;
  auto& p = detail::pool();
  if (p.size() == 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int chunks = std::min(n, p.size() * 4);
  const std::function<void(int)> job = [&](int c) {
    const int b = static_cast<int>(static_cast<long>(n) * c / chunks);
    const int e = static_cast<int>(static_cast<long>(n) * (c + 1) / chunks);
    for (int i = b; i < e; ++i) fn(i);
  };
  p.run_chunks(chunks, job);
}

}  // namespace rtgs
