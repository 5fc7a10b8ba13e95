#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace uistyler {

// SplitMix64 step; used for seeding and for deriving substream seeds.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Project-wide random generator: xoshiro256++ seeded through SplitMix64.
// State transitions are integer-only, so a given (seed, stream name) pair
// produces the same bit stream on every platform. Substreams are derived
// from the parent seed and a name, never from draw order, so adding a new
// consumer does not perturb existing streams.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0,1), 53 (resp. 24) significant bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  float next_float() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  template <class T>
  T uniform(T lo, T hi) {
    if constexpr (sizeof(T) == sizeof(double))
      return lo + (hi - lo) * static_cast<T>(next_double());
    else
      return lo + (hi - lo) * static_cast<T>(next_float());
  }

  // Index in [0, n).
  uint64_t below(uint64_t n) {
    // Rejection-free modulo bias is negligible for the index ranges used here,
    // but keep the draw unbiased anyway via 128-bit multiply.
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller; the sine partner is cached.
  template <class T>
  T normal() {
    if (has_spare_) {
      has_spare_ = false;
      return static_cast<T>(spare_);
    }
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return static_cast<T>(r * std::cos(theta));
  }

  // Independent substream for a named consumer (e.g. one per parameter).
  Rng stream(std::string_view name) const {
    uint64_t child = seed_ ^ (fnv1a64(name) + 0x9e3779b97f4a7c15ULL + (seed_ << 6) + (seed_ >> 2));
    uint64_t sm = child;
    return Rng(splitmix64(sm));
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t seed_ = 0;
  uint64_t s_[4] = {};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace uistyler
