#pragma once

#include <cstdint>
#include <functional>

namespace gvs {

// Number of worker threads (GVS_THREADS env var, else hardware concurrency).
int thread_count();

// Runs fn(begin, end) over a static partition of [0, n). Partitioning depends
// only on n and the thread count, never on scheduling, so any cross-range
// reduction done in range order is deterministic. Nested calls run serially.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace gvs
