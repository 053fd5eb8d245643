#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace qcmp {

/// SplitMix64 generator. Small state, fast, and reproducible across
/// platforms (std:: distributions are not portable across standard
/// libraries, so all sampling goes through this class).
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Unbiased integer in [0, n). n must be > 0.
  uint64_t next_below(uint64_t n) {
    // Rejection sampling on the top bits.
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  /// Integer in [lo, hi), hi > lo.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi - lo)));
  }

  /// Real in [0, 1) with 53 random bits.
  double uniform_real() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform_real(double lo, double hi) { return lo + (hi - lo) * uniform_real(); }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

 private:
  uint64_t state_;
};

inline uint64_t hash_mix(uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  x ^= x >> 33;
  return x;
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
  return hash_mix(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

/// Derives an independent stream from a base seed and a list of tags.
/// Used so that per-user / per-epoch sampling does not depend on
/// iteration order.
inline Rng derive_rng(uint64_t seed, std::initializer_list<uint64_t> tags) {
  uint64_t s = hash_mix(seed);
  for (uint64_t t : tags) s = hash_combine(s, t);
  return Rng(s);
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = rng.next_below(i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace qcmp
