#pragma once

#include <cstddef>
#include <functional>

namespace mfflow {

/// Process-wide cap on worker threads used by the flow kernels.
void set_thread_count(int threads);
int thread_count();

/// Splits [0, n) into contiguous chunks and calls body(begin, end) on each.
/// Every index is owned by exactly one chunk, so kernels that write
/// per-index results produce identical output for any thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_chunk = 64);

}  // namespace mfflow
