#pragma once

#include <cstddef>
#include <functional>

namespace deesn {

// Process-wide cap on worker threads used by parallel sections (the CLI's
// --threads flag). Zero means "hardware concurrency".
void set_max_threads(std::size_t n);
std::size_t max_threads();

// Runs body(i) for i in [0, n). Work is split across at most max_threads()
// workers; callers write into pre-sized, index-addressed outputs so results
// come back in index order regardless of scheduling. The first exception
// thrown by any task is rethrown after all workers join. Calls made from
// inside a worker run serially on that worker.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace deesn
