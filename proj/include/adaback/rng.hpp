#pragma once

#include <cstdint>
#include <random>

namespace adaback {

/// Engine used everywhere a seeded random source is needed.
using Rng = std::mt19937_64;

/// SplitMix64 finalizer; derives independent stream seeds from (seed, tag) pairs.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t tag) { return Rng{mix_seed(seed, tag)}; }

// The std distributions are implementation-defined; these are bit-exact on any
// conforming engine, which keeps seeded runs reproducible across toolchains.

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform on [lo, hi]; returns lo exactly when lo == hi.
inline double uniform_real(Rng& rng, double lo, double hi) {
  if (lo == hi) return lo;
  const double v = lo + (hi - lo) * uniform01(rng);
  return v > hi ? hi : v;
}

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

/// Unbiased integer in [0, n). n must be positive.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
  std::uint64_t r = rng();
  while (r >= limit) r = rng();
  return r % n;
}

template <class Vec>
void shuffle(Vec& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    using std::swap;
    swap(v[i - 1], v[j]);
  }
}

}  // namespace adaback
