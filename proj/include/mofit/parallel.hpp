#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace mofit {

// Index-parallel loop over independent slots. Results must be written to
// per-index storage so the output is identical for any worker count.
inline void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int team = std::min(workers, n);
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(team));
  for (int t = 0; t < team; ++t) {
    threads.emplace_back([&, t]() {
      for (int i = t; i < n; i += team) fn(i);
    });
  }
  for (auto& th : threads) th.join();
}

}  // namespace mofit
