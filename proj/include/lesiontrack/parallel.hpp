#pragma once

#include <functional>

namespace lesiontrack {

/// Worker count used by parallel kernels. Defaults to LL_THREADS when set, else the
/// hardware concurrency.
int num_threads();
void set_num_threads(int n);

/// Runs fn(lo, hi) over contiguous chunks of [begin, end). Chunks write disjoint
/// outputs; reductions are done by callers over per-index partials so results do not
/// depend on the worker count.
void parallel_for(int begin, int end, const std::function<void(int, int)>& fn);

}  // namespace lesiontrack
