#pragma once

// Deterministic random numbers. The raw 64-bit stream comes from
// std::mt19937_64 (its output sequence is fixed by the standard); every
// distribution on top of it is generated here by hand so results do not
// depend on the standard library's <random> distribution implementations.
//
// Substreams are derived by hashing the parent seed together with a name,
// so e.g. rng.stream("dropout") and rng.stream("augment") are decoupled
// and reordering calls to one never perturbs the other.

#include "cast/common.hpp"

#include <cmath>
#include <random>
#include <string_view>

namespace cast {

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), eng_(seed) {}

  uint64_t seed() const { return seed_; }

  // Derived generator whose stream is a pure function of (seed, name).
  Rng stream(std::string_view name) const {
    return Rng(splitmix64(seed_ ^ fnv1a64(name)));
  }
  Rng stream(std::string_view name, uint64_t index) const {
    return Rng(splitmix64(splitmix64(seed_ ^ fnv1a64(name)) + index));
  }

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range. Modulo bias is < range / 2^64, irrelevant here.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    require(lo <= hi, Err::invalid_argument, "uniform_int: lo > hi");
    uint64_t range = uint64_t(hi - lo) + 1;
    if (range == 0) return int64_t(next_u64());  // full 64-bit span
    return lo + int64_t(next_u64() % range);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; both values of a pair are consumed
  // before fresh uniforms are drawn, so the draw count is deterministic.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // In-place Fisher-Yates; the permutation depends only on this stream.
  template <class V>
  void shuffle(V& v) {
    for (Index i = Index(v.size()) - 1; i > 0; --i) {
      Index j = Index(uniform_int(0, i));
      std::swap(v[size_t(i)], v[size_t(j)]);
    }
  }

 private:
  uint64_t seed_;
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cast
