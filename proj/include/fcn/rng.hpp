#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "fcn/errors.hpp"

namespace fcn {

// Sub-seed streams for the documented single-seed scheme: every source of
// randomness in a run draws from derive_seed(root_seed, stream [, index]).
enum SeedStream : std::uint64_t {
  kSeedInit = 1,      // parameter initialization
  kSeedData = 2,      // dataset generation (per-sample: + index)
  kSeedDropout = 3,   // dropout masks (per forward pass)
  kSeedLossMask = 4,  // loss sampling masks
  kSeedAugment = 5,   // mirror/jitter augmentation
  kSeedOrder = 6,     // data-order shuffling
};

/// splitmix64 mixing step; the basis of all sub-seed derivation.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  return splitmix64(splitmix64(root) ^ stream);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream,
                                 std::uint64_t index) {
  return splitmix64(derive_seed(root, stream) ^ splitmix64(index));
}

/// Deterministic RNG: mt19937_64 core (bit-exact per the standard) with
/// hand-rolled value mappings so results do not depend on the stdlib's
/// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (two draws per value, no caching).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  /// Uniform integer in [lo, hi] inclusive, by rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw InvalidParamError("uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(gen_());  // full range
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t v = gen_();
    while (v >= limit) v = gen_();
    return lo + static_cast<std::int64_t>(v % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace fcn
