#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "fan/common.hpp"

namespace fan {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Deterministic random stream.
///
/// Distributions are implemented directly on the raw engine output, so the
/// produced sequences are identical across standard library implementations.
/// `fork` derives an independent child stream from the base seed and a stream
/// label only; it does not depend on how many draws the parent has consumed,
/// which keeps parallel workers reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : base_(seed), eng_(splitmix64(seed)) {}

  Rng fork(std::uint64_t stream) const {
    return Rng(splitmix64(base_ ^ (0x9e3779b97f4a7c15ull * (stream + 1))));
  }

  std::uint64_t seed() const { return base_; }

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], both ends inclusive.
  long long uniform_int(long long lo, long long hi) {
    require(lo <= hi, "uniform_int: empty range");
    const std::uint64_t width = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<long long>(next_u64() % width);
  }

  /// Standard Box-Muller transform.
  double normal(double mu = 0.0, double sigma = 1.0) {
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * r * std::cos(kTwoPi * u2);
  }

 private:
  std::uint64_t base_;
  std::mt19937_64 eng_;
};

/// Fisher-Yates with our own draws; std::shuffle's permutation order is
/// implementation-defined and would break cross-toolchain reproducibility.
template <typename V>
void deterministic_shuffle(std::vector<V>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<long long>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace fan
