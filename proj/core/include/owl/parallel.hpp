#pragma once

#include <cstddef>
#include <functional>

namespace owl {

// Worker cap: OWL_THREADS if set to a positive integer, otherwise
// std::thread::hardware_concurrency() (at least 1).
std::size_t worker_count();

// Runs fn(i) for every i in [0, n) on up to `threads` workers. Work items
// must write only to their own output slot; callers reduce in index order so
// results do not depend on the thread count. The first exception thrown by
// any item is rethrown after all workers join.
void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn);

inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  parallel_for(n, worker_count(), fn);
}

}  // namespace owl
