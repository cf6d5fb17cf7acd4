#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string_view>

namespace corerank::detail {

inline constexpr std::uint64_t fnv_offset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t fnv_prime = 0x100000001b3ULL;

constexpr std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = fnv_offset) noexcept {
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= fnv_prime;
  }
  return h;
}

// Hashes the little-endian byte image of each 32-bit value.
constexpr std::uint64_t fnv1a(std::span<const std::uint32_t> values,
                              std::uint64_t h = fnv_offset) noexcept {
  for (std::uint32_t v : values) {
    for (int shift = 0; shift < 32; shift += 8) {
      h ^= (v >> shift) & 0xffu;
      h *= fnv_prime;
    }
  }
  return h;
}

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t combine(std::uint64_t a, std::uint64_t b) noexcept {
  return mix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

template <typename... Rest>
constexpr std::uint64_t combine(std::uint64_t a, std::uint64_t b, Rest... rest) noexcept {
  return combine(combine(a, b), static_cast<std::uint64_t>(rest)...);
}

/// SplitMix64 as a UniformRandomBitGenerator. Cheap to construct, so the
/// generators reseed one per (head, row, document) cell.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform double in the open interval (0, 1).
  constexpr double next_open01() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

 private:
  std::uint64_t state_;
};

/// Unbiased index in [0, n) by rejection; independent of the standard
/// library's distribution implementations so sampling is portable.
template <typename Engine>
std::uint64_t uniform_index(Engine& engine, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t draw = 0;
  do {
    draw = static_cast<std::uint64_t>(engine());
  } while (draw >= limit);
  return draw % n;
}

}  // namespace corerank::detail
