#pragma once

#include <cstddef>
#include <functional>

namespace ctd {

/// Worker count used by parallel_for. 0 means hardware concurrency.
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Calls fn(i) for i in [0, n) across the configured workers. Each index must
/// write only its own outputs; results are then independent of worker count.
/// The first exception thrown by any index is rethrown after all workers join.
/// Calls made from inside a worker run serially on that worker.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace ctd
