#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace fir {

/// Seeded random stream with platform-stable uniform/normal draws.
///
/// std::normal_distribution is implementation-defined, so the normal and
/// truncated-normal samplers are written out explicitly (Box-Muller over a
/// fixed 53-bit uniform). The same seed yields the same byte-identical
/// stream on every platform, which the determinism contract of the training
/// harness depends on.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller. Draws are cached in pairs.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Normal truncated to [-bound, bound] standard deviations by rejection.
  double truncated_normal(double mean, double stddev, double bound = 2.0) {
    double z;
    do {
      z = normal();
    } while (z < -bound || z > bound);
    return mean + stddev * z;
  }

  /// Derive an independent child stream (for per-image noise, etc.).
  RandomStream fork(std::uint64_t salt) {
    // splitmix64 over (next engine draw, salt) decorrelates children.
    std::uint64_t x = engine_() + 0x9E3779B97F4A7C15ull * (salt + 1);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ull;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBull;
    x ^= x >> 31;
    return RandomStream(x);
  }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace fir
