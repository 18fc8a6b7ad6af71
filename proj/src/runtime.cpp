#include "cll/runtime.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace cll {

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

namespace {
std::atomic<std::size_t> g_limit{0};

std::size_t uncapped_worker_count() {
  if (const char* env = std::getenv("CLL_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}
}  // namespace

std::size_t worker_count() {
  const std::size_t limit = g_limit.load();
  const std::size_t n = uncapped_worker_count();
  return limit == 0 ? n : std::min(n, limit);
}

void set_worker_limit(std::size_t limit) { g_limit.store(limit); }

}  // namespace cll
