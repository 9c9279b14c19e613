#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace dannet {

/// splitmix64 step, also used as a general 64-bit mixer.
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
  return mix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

/// FNV-1a over a string, for keying streams by name.
inline uint64_t hash_str(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Deterministic counter-based generator (splitmix64 stream).
///
/// All distributions are implemented here rather than with <random> so
/// that draws are bit-identical across standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  /// Derive an independent stream keyed by (this seed, key).
  Rng derive(uint64_t key) const { return Rng(hash_combine(state_, mix64(key))); }
  Rng derive(const std::string& key) const { return derive(hash_str(key)); }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), n > 0. Modulo bias is negligible for
  /// desk-scale n; kept simple so the byte stream is easy to reason about.
  int64_t uniform_int(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

  /// Standard normal via Box-Muller (one draw per call, no caching, so
  /// consumption is exactly two uniforms per normal).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(static_cast<int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Draw an index from a categorical distribution given proportions
  /// summing to ~1. The last bin absorbs rounding slack.
  int categorical(const std::vector<double>& proportions) {
    double u = uniform();
    double acc = 0.0;
    for (size_t i = 0; i + 1 < proportions.size(); ++i) {
      acc += proportions[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(proportions.size()) - 1;
  }

 private:
  uint64_t state_;
};

}  // namespace dannet
