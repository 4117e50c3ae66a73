#pragma once

#include <cstdint>
#include <initializer_list>

namespace mapo::rng {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based generator: one independent 64-bit word per (key, counter).
constexpr std::uint64_t counter_bits(std::uint64_t key, std::uint64_t counter) noexcept {
  return mix64(mix64(key) ^ (counter * 0xD6E8FEB86659FD93ULL + 0x2545F4914F6CDD1DULL));
}

/// Top 53 bits mapped onto [0, 1).
constexpr double to_unit(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

constexpr double uniform(std::uint64_t key, std::uint64_t counter) noexcept {
  return to_unit(counter_bits(key, counter));
}

/// Derives a child seed from a parent and a path of integer labels.
constexpr std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t s = mix64(seed);
  for (auto label : path) s = counter_bits(s, label);
  return s;
}

}  // namespace mapo::rng
