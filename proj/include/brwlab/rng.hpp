#pragma once

// Keyed random streams. A stream is addressed by (seed, a, b), e.g. (seed,
// generation, parent index), so any block of randomness can be regenerated on
// its own, independent of traversal order or thread count.

#include <array>
#include <cstdint>
#include <limits>

namespace brwlab::rng {

constexpr std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Mixes a key tuple into a single 64-bit seed.
constexpr std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t s = seed ^ 0x6a09e667f3bcc909ULL;
  std::uint64_t h = splitmix64(s);
  s = h ^ (a + 0x3c6ef372fe94f82bULL);
  h = splitmix64(s);
  s = h ^ (b + 0xa54ff53a5f1d36f1ULL);
  return splitmix64(s);
}

// xoshiro256** with a cached Box–Muller normal.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit Stream(std::uint64_t seed);
  Stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) : Stream(derive(seed, a, b)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform on (0, 1): never returns 0 or 1.
  double uniform() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

  double normal();

  // Uniform integer in [0, n) by Lemire's multiply-shift (negligible bias for n << 2^64).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>((*this)()) * n) >> 64);
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<std::uint64_t, 4> s_{};
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace brwlab::rng
