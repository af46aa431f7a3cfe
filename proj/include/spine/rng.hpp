#pragma once

#include <cmath>
#include <cstdint>

namespace spine {

// xoshiro256++ seeded through splitmix64. Self-contained so that streams are
// reproducible across standard libraries; all sampling helpers consume a fixed
// number of raw draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  std::int64_t uniform_int(std::int64_t n) {
    if (n <= 1) return 0;
    const std::int64_t v = std::int64_t(uniform() * double(n));
    return v < n ? v : n - 1;
  }

  // Standard normal, Box-Muller; consumes two raw draws per value.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Independent child stream keyed by `tag`.
  Rng split(std::uint64_t tag) const {
    std::uint64_t x = s_[0] ^ (s_[3] + 0x9e3779b97f4a7c15ull * (tag + 1));
    Rng child(0);
    for (auto& w : child.s_) w = splitmix64(x);
    return child;
  }

 private:
  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

  std::uint64_t s_[4];
};

}  // namespace spine
