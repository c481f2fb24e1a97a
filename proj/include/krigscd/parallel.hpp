#pragma once

#include <cstdint>
#include <exception>
#include <functional>

namespace krigscd {

// Worker count: KRIGSCD_THREADS if set and positive, else hardware concurrency.
int default_thread_count();

// Runs body(i) for i in [0, n) over up to `threads` workers (0 = default).
// Iterations must write disjoint outputs. The exception from the lowest failing index is rethrown.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body, int threads = 0);

}  // namespace krigscd
