#pragma once

#include <cstdint>

namespace edgelite {

/// Counter-based SplitMix64 generator.
///
/// Output i (0-based) is mix64(seed + (i + 1) * 0x9E3779B97F4A7C15), where
/// mix64 is the SplitMix64 finalizer. The sequence depends only on the seed
/// and the draw index, so every platform reproduces it bit-for-bit. Normal
/// draws use the Box-Muller transform on two uniform draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Uniform integer in [lo, hi].
  std::int64_t between(std::int64_t lo, std::int64_t hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  bool bernoulli(double p) { return uniform() < p; }

  /// Independent generator for a sub-stream; does not advance this one.
  Rng fork(std::uint64_t stream) const;

  static std::uint64_t mix64(std::uint64_t z);

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace edgelite
