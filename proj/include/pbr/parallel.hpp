#pragma once

#include <cstddef>
#include <functional>

namespace pbr {

/// Worker count from PBR_WORKERS, defaulting to hardware concurrency.
std::size_t worker_count();

/// Runs body(begin, end) over fixed-size chunks of [0, n). Chunk boundaries do
/// not depend on the worker count, so per-chunk reductions merged in chunk
/// order give identical results for any number of workers.
void parallel_chunks(std::size_t n, std::size_t chunk,
                     const std::function<void(std::size_t chunk_index, std::size_t begin,
                                              std::size_t end)>& body);

inline std::size_t chunk_count(std::size_t n, std::size_t chunk) {
  return (n + chunk - 1) / chunk;
}

}  // namespace pbr
