#pragma once

#include <cstddef>
#include <functional>

namespace jdl {

// Worker count: JDL_THREADS if set to a positive integer, else the hardware
// concurrency (at least 1).
unsigned worker_count();

// Runs fn(i) for i in [0, count) over a static partition. Callers write into
// per-index slots and reduce afterwards, so results do not depend on the
// thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace jdl
