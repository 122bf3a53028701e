#pragma once

#include <cstddef>
#include <functional>

namespace ecgfe {

/// Worker count: ECGFE_WORKERS if set and positive, otherwise hardware concurrency.
std::size_t worker_count();

/// Runs body(i) for i in [0, n) on up to worker_count() threads.
/// The first exception thrown by any body is rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

} // namespace ecgfe
