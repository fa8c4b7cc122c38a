#include "cistonet/util.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace cistonet {

int env_thread_cap() {
  const char* v = std::getenv("CI_STONET_THREADS");
  if (!v) return 1;
  const int t = std::atoi(v);
  return t > 0 ? t : 1;
}

double sorted_quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("sorted_quantile: empty input");
  if (q <= 0.0) return sorted.front();
  if (q >= 1.0) return sorted.back();
  const double h = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const double frac = h - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace cistonet
