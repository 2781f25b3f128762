#pragma once

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

namespace merg3r {

// 0 or negative selects the hardware concurrency.
int ResolveThreadCount(int requested);

// Calls fn(i) for every i in [0, n) using up to `num_threads` workers.
// Items are claimed dynamically; fn must only write to per-index state.
// The first exception thrown by any item is rethrown after all workers join.
void ParallelFor(size_t n, int num_threads,
                 const std::function<void(size_t)>& fn);

// Combines adjacent entries level by level. The association order depends
// only on parts.size(), so results are reproducible for a fixed chunking.
template <typename T, typename Combine>
T PairwiseReduce(std::vector<T> parts, Combine combine) {
  if (parts.empty()) return T{};
  while (parts.size() > 1) {
    std::vector<T> next;
    next.reserve((parts.size() + 1) / 2);
    for (size_t i = 0; i + 1 < parts.size(); i += 2) {
      next.push_back(combine(std::move(parts[i]), std::move(parts[i + 1])));
    }
    if (parts.size() % 2 == 1) next.push_back(std::move(parts.back()));
    parts = std::move(next);
  }
  return std::move(parts.front());
}

}  // namespace merg3r
