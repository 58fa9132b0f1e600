#include "robustssm/rng.hpp"

#include <cmath>
#include <numbers>

namespace rssm {

double SplitMix64::normal() noexcept {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t parent, std::string_view label) noexcept {
  return SplitMix64::mix(parent ^ SplitMix64::mix(fnv1a64(label)));
}

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) noexcept {
  return SplitMix64::mix(parent + 0x9E3779B97F4A7C15ULL * (index + 1));
}

}  // namespace rssm
