#pragma once
#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace datcft {

// FNV-1a; stable across platforms so seed forks are reproducible everywhere.
constexpr uint64_t fnv1a(std::string_view s, uint64_t h = 1469598103934665603ull) {
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// mt19937_64 engine with hand-rolled distributions; std:: distributions are
// implementation-defined and would break cross-toolchain determinism.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), eng_(splitmix64(seed)) {}

  uint64_t next_u64() { return eng_(); }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    // Box-Muller; u clamped away from 0
    double u = uniform();
    if (u < 1e-300) u = 1e-300;
    double v = uniform();
    double r = std::sqrt(-2.0 * std::log(u));
    double a = 6.283185307179586476925286766559 * v;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  // [0, n), unbiased
  int64_t uniform_int(int64_t n) {
    uint64_t un = static_cast<uint64_t>(n);
    uint64_t bound = ~uint64_t{0} - (~uint64_t{0} % un);
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= bound);
    return static_cast<int64_t>(x % un);
  }

  // Independent stream derived from (seed, tag, index); draw-order independent.
  Rng fork(std::string_view tag, uint64_t index = 0) const {
    uint64_t s = fnv1a(tag, seed_ ^ 0x6a09e667f3bcc908ull);
    s = splitmix64(s + index * 0x9e3779b97f4a7c15ull);
    return Rng(s);
  }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::mt19937_64 eng_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace datcft
