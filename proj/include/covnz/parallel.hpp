#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace covnz {

// Global worker cap set by the CLI --threads flag. 0 means "hardware".
void set_thread_cap(int n);
int thread_cap();

// Runs fn(begin, end) over fixed-size chunks of [0, n). The chunk grid
// depends only on (n, chunk), never on the worker count, and workers write
// to disjoint outputs, so results are bit-identical for any thread count.
void parallel_for_chunks(std::size_t n, std::size_t chunk,
                         const std::function<void(std::size_t, std::size_t)>& fn);

// Chunked map-reduce with a deterministic merge: partials are produced per
// chunk (in parallel) and merged strictly in chunk order on the caller's
// thread.
template <typename Acc, typename ChunkFn, typename MergeFn>
Acc parallel_reduce_chunks(std::size_t n, std::size_t chunk, Acc init,
                           ChunkFn&& chunk_fn, MergeFn&& merge) {
  if (n == 0) return init;
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  std::vector<Acc> partials(n_chunks);
  parallel_for_chunks(n_chunks, 1, [&](std::size_t cb, std::size_t ce) {
    for (std::size_t c = cb; c < ce; ++c) {
      const std::size_t lo = c * chunk;
      const std::size_t hi = lo + chunk < n ? lo + chunk : n;
      partials[c] = chunk_fn(lo, hi);
    }
  });
  Acc acc = std::move(init);
  for (std::size_t c = 0; c < n_chunks; ++c) merge(acc, partials[c]);
  return acc;
}

}  // namespace covnz
