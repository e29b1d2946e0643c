#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace gphodlr {

/// SplitMix64 finalizer. Used as a stateless counter-based hash so that random
/// draws depend only on (seed, counter) and never on evaluation order.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based Rademacher draw: +1 or -1 from bit 63 of a double hash of
/// (seed, stream, index).
inline double rademacher(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept {
  const std::uint64_t h = splitmix64(splitmix64(seed ^ splitmix64(stream)) + index);
  return (h >> 63) ? 1.0 : -1.0;
}

/// Standard normal generator with a fully specified algorithm ("mt19937_64 +
/// Box-Muller, v1"): std::normal_distribution is implementation defined, this
/// is not, so fixtures stay stable across standard libraries.
class NormalGenerator {
 public:
  static constexpr const char* algorithm = "mt19937_64+box-muller/v1";

  explicit NormalGenerator(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in (0, 1), 53 random bits.
  double uniform() {
    double u;
    do {
      u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    } while (u == 0.0);
    return u;
  }

  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace gphodlr
