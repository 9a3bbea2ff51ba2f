#include "meshalign/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace meshalign {

std::size_t kernel_threads() {
  static const std::size_t threads = [] {
    std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("MESHALIGN_THREADS")) {
      try {
        long requested = std::stol(env);
        if (requested >= 1) return std::min<std::size_t>(hw, requested);
      } catch (const std::exception&) {
      }
    }
    return hw;
  }();
  return threads;
}

namespace {
thread_local bool in_parallel_region = false;
}  // namespace

void parallel_for(std::size_t count,
                  const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_chunk) {
  if (count == 0) return;
  std::size_t workers =
      std::min(kernel_threads(), std::max<std::size_t>(1, count / std::max<std::size_t>(1, min_chunk)));
  if (workers <= 1 || in_parallel_region) {
    body(0, count);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  std::size_t chunk = (count + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    std::size_t begin = w * chunk;
    std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] {
      in_parallel_region = true;
      body(begin, end);
    });
  }
  in_parallel_region = true;
  body(0, std::min(count, chunk));
  in_parallel_region = false;
  for (auto& t : pool) t.join();
}

}  // namespace meshalign
