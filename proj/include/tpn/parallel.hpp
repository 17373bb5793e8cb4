#pragma once

#include <thread>
#include <vector>

namespace tpn {

/// Runs fn(i) for i in [0, n) on up to `threads` workers using contiguous
/// chunks. fn must only write to per-index storage; callers reduce afterwards
/// in index order, so results do not depend on the thread count.
template <typename Fn>
void parallel_for(std::ptrdiff_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    for (std::ptrdiff_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::ptrdiff_t workers = std::min<std::ptrdiff_t>(threads, n);
  std::vector<std::jthread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (std::ptrdiff_t w = 0; w < workers; ++w) {
    const std::ptrdiff_t lo = n * w / workers;
    const std::ptrdiff_t hi = n * (w + 1) / workers;
    pool.emplace_back([lo, hi, &fn] {
      for (std::ptrdiff_t i = lo; i < hi; ++i) fn(i);
    });
  }
}

}  // namespace tpn
