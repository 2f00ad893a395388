#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace stabkit {

// Counter-based random streams: every draw is a pure function of
// (seed, stream, counter), so corruption noise is reproducible regardless
// of evaluation order and parallelism.

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_counter(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  return mix64(mix64(seed ^ 0x2545f4914f6cdd1dULL) ^ mix64(stream) ^ counter * 0xda942042e4dd58b5ULL);
}

// uniform in [0,1) with 53-bit resolution
inline double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  return static_cast<double>(hash_counter(seed, stream, counter) >> 11) * 0x1.0p-53;
}

// standard normal via Box-Muller on two counter draws
inline double counter_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  double u1 = counter_uniform(seed, stream, 2 * counter);
  double u2 = counter_uniform(seed, stream, 2 * counter + 1);
  u1 = std::max(u1, 0x1.0p-60);  // avoid log(0)
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

// Sequential generator for training-time decisions (sampling, init).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::int64_t index(std::int64_t n) {
    return std::uniform_int_distribution<std::int64_t>(0, n - 1)(engine_);
  }
  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace stabkit
