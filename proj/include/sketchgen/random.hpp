#pragma once

#include <cstdint>
#include <random>
#include <span>

#include "sketchgen/error.hpp"

namespace sketchgen {

// Mixes a seed with a stream id so parallel workers get decorrelated,
// reproducible substreams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic random source. mt19937_64 output is pinned by the standard
// and all distribution arithmetic is done here rather than through
// std::*_distribution (whose algorithms are implementation-defined), so the
// same seed yields identical streams on every platform.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed) : engine_(seed) {}

  static RandomSource for_stream(std::uint64_t seed, std::uint64_t stream) {
    return RandomSource(splitmix64(seed ^ splitmix64(stream)));
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  std::size_t next_index(std::size_t n) {
    if (n == 0) throw InternalError("next_index: empty range");
    // Rejection sampling keeps the draw exactly uniform.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return static_cast<std::size_t>(v % n);
  }

  bool bernoulli(double p) { return next_double() < p; }

  // Index drawn proportionally to non-negative weights.
  std::size_t weighted_index(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw InternalError("weighted_index: zero total weight");
    double u = next_double() * total;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      u -= weights[i];
      if (u < 0.0) return i;
    }
    return weights.size() - 1;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sketchgen
