#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace cistonet {

// splitmix64 finalizer; used to derive independent substream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Documented substream scheme: seed(master, path...) = iterated splitmix64
// over the path words. Adding later path values never perturbs earlier
// streams, so e.g. replication r always sees the same seed regardless of
// how many replications a run requests.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix64(master);
  for (std::uint64_t p : path) s = mix64(s ^ mix64(p));
  return s;
}

// Deterministic RNG with explicit uniform/normal transforms so results are
// bit-reproducible independent of the standard library's distribution
// implementations. Single-threaded use per instance.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1) with 53-bit resolution
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // (0, 1]
  double uniform_pos() {
    return (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
  }

  // (0, 1)
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    return u;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller with cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * M_PI * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  // integer in [0, n), unbiased
  int uniform_int(int n) {
    const std::uint64_t nn = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % nn;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return static_cast<int>(x % nn);
  }

  // Independent child stream.
  Rng substream(std::uint64_t id) const {
    return Rng(derive_seed(state_seed_hash(), {id}));
  }

 private:
  std::uint64_t state_seed_hash() const {
    // hash a copy's next outputs without disturbing our state
    std::mt19937_64 copy = gen_;
    return mix64(copy() ^ mix64(copy()));
  }

  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cistonet
