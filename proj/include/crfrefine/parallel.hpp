#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace crfrefine {

/// Number of workers used by parallel_for; 0 means hardware_concurrency.
void set_worker_count(std::size_t workers) noexcept;
[[nodiscard]] std::size_t worker_count() noexcept;

/// Calls body(begin, end) over a static partition of [0, n). Chunks are
/// disjoint, so bodies that only write their own indices need no locking.
template <typename Body>
void parallel_for(std::size_t n, Body&& body, std::size_t min_chunk = 256) {
  const std::size_t workers = std::min(worker_count(), (n + min_chunk - 1) / std::max<std::size_t>(min_chunk, 1));
  if (workers <= 1) {
    body(std::size_t{0}, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::jthread> threads;
  threads.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&body, begin, end] { body(begin, end); });
  }
  body(std::size_t{0}, std::min(n, chunk));
}

}  // namespace crfrefine
