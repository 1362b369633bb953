#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <utility>

namespace misdetect {

/// SplitMix64 generator. Every random decision in the library (splits,
/// shuffles, initialization, pair sampling, masking, dropout) is drawn from
/// this so that runs are reproducible across compilers and standard libraries.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform integer in [0, bound) by rejection; bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal();

 private:
  std::uint64_t state_;
};

/// Stateless mix of one 64-bit word, the SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Hashes an ordered tuple of keys into a single 64-bit value.
std::uint64_t hash_keys(std::initializer_list<std::uint64_t> keys);

/// Fisher-Yates shuffle driven by SplitMix64::below.
template <typename T>
void shuffle(std::span<T> items, SplitMix64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace misdetect
