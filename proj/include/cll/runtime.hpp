#pragma once

#include <cstddef>

namespace cll {

// Keeps freed heap memory mapped so per-step tensor allocations reuse warm
// pages instead of faulting fresh ones. Call once at program start; no-op
// outside glibc.
void tune_allocator();

// Worker count for parallel evaluation: CLL_THREADS when set to a positive
// integer, otherwise the hardware concurrency (at least 1), capped by any
// limit set below.
std::size_t worker_count();

// Process-wide cap on worker_count(); 0 removes it.
void set_worker_limit(std::size_t limit);

}  // namespace cll
