#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace cistonet {

// Runs fn(i) for i in [0, n). Work is split by index stride, so results keyed
// by i are identical for any thread count.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int t = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(t);
  for (int w = 0; w < t; ++w)
    pool.emplace_back([&, w]() {
      for (int i = w; i < n; i += t) fn(i);
    });
  for (auto& th : pool) th.join();
}

// CI_STONET_THREADS caps parallel replications; defaults to 1 (serial).
int env_thread_cap();

// Linear-interpolation empirical quantile of a sorted vector, q in [0,1].
double sorted_quantile(const std::vector<double>& sorted, double q);

}  // namespace cistonet
