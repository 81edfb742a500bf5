#pragma once

#include <cstddef>
#include <functional>

namespace dpsr {

// Worker count: DPSR_THREADS if set and positive, otherwise hardware concurrency.
std::size_t thread_count();
void set_thread_count(std::size_t n);

// Splits [0, n) into contiguous chunks and runs body(begin, end) on each.
// Every index is processed by exactly one worker, so results are bitwise
// independent of the thread count as long as body writes disjoint outputs.
// Work below `grain` indices per worker runs inline.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t grain = 16);

}  // namespace dpsr
