// SPDX-License-Identifier: Apache-2.0
//
// ngso-bf: user-terminal receive beamforming for NGSO co-frequency
// interference mitigation.

#ifndef NGSOBF_RNG_HPP
#define NGSOBF_RNG_HPP

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>

namespace ngsobf {

/// SplitMix64 finalizer. Advances `state` and returns the mixed output.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Deterministic sub-stream derivation. Every consumer of randomness gets its
/// own engine seeded by derive_seed(master, tag); tags are unique per stream
/// so that independent draws never share an engine state.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t s = seed;
  const std::uint64_t a = splitmix64(s);
  s = a ^ (tag * 0xD1342543DE82EF95ull + 0x2545F4914F6CDD1Dull);
  return splitmix64(s);
}

// Stream tags used across the simulator. Kept in one place so no two
// consumers of the same master seed collide.
namespace seed_stream {
inline constexpr std::uint64_t kScenario = 0x01;
inline constexpr std::uint64_t kDesiredSymbols = 0x02;
inline constexpr std::uint64_t kNoise = 0x03;
inline constexpr std::uint64_t kCsiError = 0x04;
inline constexpr std::uint64_t kTrainSplit = 0x05;
inline constexpr std::uint64_t kTestSplit = 0x06;
inline constexpr std::uint64_t kParamInit = 0x07;
inline constexpr std::uint64_t kShuffleBase = 0x1000;
inline constexpr std::uint64_t kInterfererSymbolsBase = 0x2000;
}  // namespace seed_stream

/// Seeded random source with portable output. std::mt19937_64 produces a
/// sequence fully specified by the standard; the uniform/Gaussian mappings
/// below replace the implementation-defined std::*_distribution classes so
/// that a given seed yields the same draws on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  /// Uniform on [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; pairs are cached.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] keeps the log finite.
    const double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Circularly symmetric complex Gaussian CN(0, variance): real and
  /// imaginary parts are independent N(0, variance / 2).
  std::complex<double> complex_gaussian(double variance) {
    const double s = std::sqrt(variance * 0.5);
    const double re = s * gaussian();
    const double im = s * gaussian();
    return {re, im};
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace ngsobf

#endif  // NGSOBF_RNG_HPP
