#include "covnz/parallel.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace covnz {

namespace {
std::atomic<int> g_thread_cap{0};
}

void set_thread_cap(int n) { g_thread_cap.store(n < 0 ? 0 : n); }

int thread_cap() {
  int cap = g_thread_cap.load();
  if (cap <= 0) {
    cap = static_cast<int>(std::thread::hardware_concurrency());
    if (cap <= 0) cap = 1;
  }
  return cap;
}

void parallel_for_chunks(std::size_t n, std::size_t chunk,
                         const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  if (chunk == 0) chunk = 1;
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  const int workers =
      static_cast<int>(std::min<std::size_t>(n_chunks, static_cast<std::size_t>(thread_cap())));
  if (workers <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) {
      const std::size_t lo = c * chunk;
      fn(lo, std::min(lo + chunk, n));
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto body = [&]() {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= n_chunks) break;
      const std::size_t lo = c * chunk;
      try {
        fn(lo, std::min(lo + chunk, n));
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        next.store(n_chunks);  // drain remaining work
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int i = 0; i < workers - 1; ++i) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace covnz
