#pragma once

#include <cstdint>
#include <functional>

namespace msif {

// Worker count from MSIF_NUM_WORKERS, else hardware concurrency, never < 1.
int worker_count();

// Runs fn(0..n-1) across workers. Deterministic as long as fn(i) touches only
// slot i of shared state. Rethrows the first exception after joining.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace msif
