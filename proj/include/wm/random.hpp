#pragma once

// Deterministic random streams. Everything here is hand-rolled so that a
// seed produces the same world on every platform and standard library.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace wm {

/// splitmix64 finalizer; a bijection on 64-bit integers.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed for attempt `attempt` of chain `chain` under `master`.
///
/// The chain and attempt indices are packed into one word (chain in the top
/// 24 bits, attempt in the low 40) and xor-ed with the mixed master seed
/// before a final mix64. Both steps are bijective, so outputs never collide
/// for chain < 2^24 and attempt < 2^40.
constexpr std::uint64_t derive_chain_seed(std::uint64_t master, std::uint64_t chain, std::uint64_t attempt) {
  const std::uint64_t packed = (chain << 40) ^ (attempt & ((std::uint64_t{1} << 40) - 1));
  return mix64(mix64(master + 0x9e3779b97f4a7c15ULL) ^ packed);
}

/// xoshiro256** seeded through splitmix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) {
      x += 0x9e3779b97f4a7c15ULL;
      s = mix64(x);
    }
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    // Lemire's multiply-shift with rejection for exact uniformity.
    std::uint64_t x = next();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    std::uint64_t low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = -n % n;
      while (low < threshold) {
        x = next();
        m = static_cast<__uint128_t>(x) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  bool flip(double p) { return uniform01() < p; }

  /// Box-Muller; one normal per call, the partner variate is discarded.
  double standard_normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double gaussian(double mean, double stdev) { return mean + stdev * standard_normal(); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double exponential(double rate) { return -std::log1p(-uniform01()) / rate; }

  /// Failures before the first success of Bernoulli(p), added to lo and
  /// clamped at hi.
  double bounded_geometric(double p, double lo, double hi) {
    double k = lo;
    while (k < hi && !flip(p)) k += 1;
    return k < hi ? k : hi;
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4]{};
};

}  // namespace wm
