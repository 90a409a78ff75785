#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

#include "cascade/types.hpp"

namespace cascade {

// Strided parallel loop. Each index is processed exactly once and must write
// only to its own output slot, so serial and parallel runs produce identical
// results bit for bit.
inline void parallel_for(Index n, int threads,
                         const std::function<void(Index)>& body) {
  if (n <= 0) return;
  const int workers = static_cast<int>(std::min<Index>(std::max(threads, 1), n));
  if (workers <= 1) {
    for (Index i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([t, workers, n, &body] {
      for (Index i = t; i < n; i += workers) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace cascade
