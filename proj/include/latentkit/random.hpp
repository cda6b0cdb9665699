#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace latentkit {

// Seeded random source with platform-independent output.
//
// std::mt19937_64 is fully specified by the standard, but the standard
// distributions are not, so uniform/normal/laplace draws are derived here
// directly from the raw engine output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second variate is cached.
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

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Laplace(0, scale) by inverse CDF.
  double laplace(double scale = 1.0) {
    double u = uniform() - 0.5;
    while (u == -0.5) u = uniform() - 0.5;
    const double s = u < 0.0 ? -1.0 : 1.0;
    return -scale * s * std::log(1.0 - 2.0 * std::abs(u));
  }

  // Uniform integer in [0, n) by rejection; n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace latentkit
