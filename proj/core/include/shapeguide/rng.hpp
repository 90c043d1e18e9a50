#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace shapeguide {

/// Counter-based 64-bit generator.
///
/// Draw i is `mix64(key + (i + 1) * 0x9E3779B97F4A7C15)` where `mix64` is the
/// SplitMix64 finalizer. The stream is a pure function of (key, counter), so it
/// is identical on every platform and any position can be reproduced without
/// replaying earlier draws. Independent sub-streams come from `fork`.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(mix64(seed ^ 0x5DEECE66DULL)), seed_(seed) {}

  static constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() {
    ++counter_;
    return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Uses rejection to stay unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller; the spare deviate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Child stream keyed by (this stream's seed, stream id). Does not advance this stream.
  Rng fork(std::uint64_t stream) const {
    return Rng(mix64(seed_ * 0xD1B54A32D192ED03ULL + mix64(stream + 0x632BE59BD9B4E019ULL)));
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace shapeguide
