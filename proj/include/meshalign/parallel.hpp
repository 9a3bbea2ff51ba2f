#pragma once

#include <cstddef>
#include <functional>

namespace meshalign {

/// Worker cap for kernel parallelism. Reads MESHALIGN_THREADS once; defaults
/// to hardware concurrency.
std::size_t kernel_threads();

/// Runs body(begin, end) over a static partition of [0, count). Every index is
/// owned by exactly one worker, so kernels that write disjoint outputs per
/// index stay bit-deterministic regardless of the thread count.
void parallel_for(std::size_t count,
                  const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_chunk = 1);

}  // namespace meshalign
