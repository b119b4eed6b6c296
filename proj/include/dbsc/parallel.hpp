#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dbsc {

// Resolves the worker count: explicit request > DBSC_WORKERS env var > hardware, capped at 8.
inline int resolve_workers(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("DBSC_WORKERS")) {
    const int parsed = std::atoi(env);
    if (parsed > 0) return parsed;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  const int fallback = hw == 0 ? 1 : static_cast<int>(hw);
  return fallback > 8 ? 8 : fallback;
}

// Runs fn(0..n_tasks-1) over a bounded pool. Callers write results into slots indexed
// by task id, so reductions are ordered by task, never by completion. The first
// exception thrown by any task is rethrown on the calling thread.
inline void parallel_for(int n_tasks, int workers, const std::function<void(int)>& fn) {
  if (n_tasks <= 0) return;
  workers = resolve_workers(workers);
  if (workers > n_tasks) workers = n_tasks;
  if (workers <= 1) {
    for (int task = 0; task < n_tasks; ++task) fn(task);
    return;
  }

  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;

  auto body = [&]() {
    while (true) {
      const int task = next.fetch_add(1);
      if (task >= n_tasks || failed.load()) return;
      try {
        fn(task);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace dbsc
