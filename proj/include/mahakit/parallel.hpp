#pragma once

#include <cstddef>
#include <functional>

namespace mahakit {

/// Worker count from MAHAKIT_THREADS (0 or unset = hardware concurrency).
std::size_t worker_count();

/// Runs task(i) for i in [0, n_tasks) on up to worker_count() threads.
/// Tasks must write only to slots they own; the first exception is rethrown.
void parallel_for(std::size_t n_tasks, const std::function<void(std::size_t)>& task);

}  // namespace mahakit
