// Copyright 2026 PQS Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace pqs {

// Run fn over [0, n) split into contiguous chunks, one per worker. The
// partition depends only on (n, threads), and chunk results must be merged in
// chunk order by the caller, so outputs are identical at any thread count.
inline void parallel_for(std::int64_t n, int threads,
                         const std::function<void(std::int64_t, std::int64_t, int)>& fn) {
  if (threads < 1) threads = 1;
  if (n <= 0) return;
  const int workers = static_cast<int>(std::min<std::int64_t>(threads, n));
  if (workers == 1) {
    fn(0, n, 0);
    return;
  }
  const std::int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    const std::int64_t lo = w * chunk;
    const std::int64_t hi = std::min<std::int64_t>(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi, w] { fn(lo, hi, w); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace pqs
