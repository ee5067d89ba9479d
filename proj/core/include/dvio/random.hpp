#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dvio {

/// Stateless 64-bit mixer (splitmix64 finalizer).
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) { return mix64(a ^ mix64(b)); }

/// Uniform in [0, 1) from the top 53 bits.
inline double unit_from_bits(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

/// Keyed standard normal: the same key always yields the same value.
inline double keyed_normal(std::uint64_t key) {
  const double u1 = unit_from_bits(mix64(key));
  const double u2 = unit_from_bits(mix64(key ^ 0x5851F42D4C957F2DULL));
  return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * M_PI * u2);
}

/// Sequential generator. std::mt19937_64 output is fixed by the standard, while the
/// standard distributions are not, so draws are converted here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::uint64_t stream) : engine_(hash_combine(seed, stream)) {}

  double uniform() { return unit_from_bits(engine_()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi) { return lo + static_cast<int>(uniform() * (hi - lo + 1)); }
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * M_PI * u2);
  }
  double normal(double sigma) { return sigma * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dvio
