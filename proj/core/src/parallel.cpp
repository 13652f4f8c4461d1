#include "octoforce/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

#include "octoforce/errors.hpp"

namespace octoforce {

namespace {
std::atomic<int> g_threads{1};
thread_local bool t_inside_worker = false;

struct WorkerScope {
  bool saved = t_inside_worker;
  WorkerScope() { t_inside_worker = true; }
  ~WorkerScope() { t_inside_worker = saved; }
};
}

void set_num_threads(int threads) {
  if (threads < 1) throw ConfigError("thread count must be >= 1, got " + std::to_string(threads));
  g_threads = threads;
}

int num_threads() noexcept { return g_threads.load(); }

void parallel_chunks(std::int64_t count, const std::function<void(int, std::int64_t, std::int64_t)>& fn) {
  // Nested calls from inside a worker run serially.
  const int threads = t_inside_worker ? 1 : num_threads();
  const int chunks = static_cast<int>(std::min<std::int64_t>(std::max(1, threads), std::max<std::int64_t>(count, 1)));
  if (chunks <= 1) {
    fn(0, 0, count);
    return;
  }
  std::vector<std::exception_ptr> errors(chunks);
  std::vector<std::thread> workers;
  workers.reserve(chunks - 1);
  auto run = [&](int c) {
    const std::int64_t begin = count * c / chunks;
    const std::int64_t end = count * (c + 1) / chunks;
    try {
      WorkerScope scope;
      fn(c, begin, end);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  for (int c = 1; c < chunks; ++c) workers.emplace_back(run, c);
  run(0);
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace octoforce
