#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

namespace gocbed {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stream seed for (base, parts...). Distinct part tuples give unrelated streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = splitmix64(base ^ 0x6a09e667f3bcc908ULL);
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p + 0x3c6ef372fe94f82bULL));
  return h;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> parts = {}) {
  return Rng(derive_seed(base, parts));
}

inline double std_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Standard Gumbel draw.
inline double gumbel(Rng& rng) {
  double u = uniform(rng);
  u = std::clamp(u, 1e-300, 1.0 - 1e-16);
  return -std::log(-std::log(u));
}

}  // namespace gocbed
