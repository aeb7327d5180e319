#pragma once

#include <cstddef>
#include <functional>

namespace circuitscope {

// Worker count: CIRCUITSCOPE_THREADS if set to a positive integer, otherwise
// the hardware concurrency (at least 1).
std::size_t worker_count();

// Runs body(i) for i in [0, n). Callers write into per-index slots and reduce
// afterwards in index order, so results do not depend on the worker count.
// The first exception thrown by any body is rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace circuitscope
