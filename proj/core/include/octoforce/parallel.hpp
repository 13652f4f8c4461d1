#pragma once

#include <cstdint>
#include <functional>

namespace octoforce {

// Worker count used by the heavy kernels. Results are bit-identical for a
// fixed count; the default is 1.
void set_num_threads(int threads);
int num_threads() noexcept;

// Splits [0, count) into num_threads() contiguous chunks and runs
// fn(chunk_index, begin, end) for each, blocking until all finish. Chunk
// boundaries depend only on count and the thread count.
void parallel_chunks(std::int64_t count, const std::function<void(int, std::int64_t, std::int64_t)>& fn);

}  // namespace octoforce
