#pragma once

#include <cstddef>
#include <functional>

namespace driftlab {

// Worker count: explicit value if > 0, else DRIFTLAB_WORKERS, else hardware concurrency.
unsigned resolve_workers(unsigned requested = 0);

/// Runs fn(i) for i in [0, count) on up to `workers` threads.
///
/// Indices are handed out dynamically, so callers must write results into
/// index-addressed slots and reduce them in index order afterwards. The first
/// exception thrown by any task is rethrown on the calling thread.
void parallel_for(std::size_t count, unsigned workers, const std::function<void(std::size_t)>& fn);

}  // namespace driftlab
