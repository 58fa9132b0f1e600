#pragma once

#include <cstdint>
#include <string_view>

namespace rssm {

// SplitMix64 (Steele, Lea & Flood 2014). The n-th output is a pure function
// of seed + n * 0x9E3779B97F4A7C15, so every stream is reproducible on any
// platform. All seeded randomness in the library (synthetic data, noise
// fields, drop sets, fault plans, shuffles, initialization) goes through it.
class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix(state_);
  }

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
  }

  // Uniform integer in [0, bound) by rejection; bound must be > 0.
  std::uint64_t below(std::uint64_t bound) noexcept {
    const std::uint64_t limit = bound * (~std::uint64_t{0} / bound);
    std::uint64_t r = next();
    while (r >= limit) r = next();
    return r % bound;
  }

  // Standard normal via Box-Muller; consumes exactly two outputs per call.
  double normal() noexcept;

 private:
  std::uint64_t state_;
};

// Labeled seed derivation: a child seed that depends on both the parent
// seed and a label, used for the global-seed -> subsystem-seed hierarchy.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label) noexcept;
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) noexcept;

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

}  // namespace rssm
