#pragma once

#include <cstddef>
#include <functional>

namespace bdh {

// BDH_THREADS when set (a positive integer), else the hardware concurrency.
std::size_t worker_threads();

// Runs fn(i) for i in [0, count) on up to worker_threads() threads. Results
// must not depend on the schedule; the first exception is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace bdh
