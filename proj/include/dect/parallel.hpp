#pragma once

#include <cstdint>
#include <functional>

namespace dect {

// Worker cap for data-parallel loops. Defaults to the BCDNET_THREADS
// environment variable, else 1. All loops below compute each element in
// exactly one call, so outputs never depend on this setting.
int worker_count();
void set_worker_count(int n);

// Runs fn(begin, end) over contiguous chunks covering [0, n).
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace dect
