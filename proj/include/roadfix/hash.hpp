#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace roadfix {

/// 64-bit FNV-1a. Used for config hashes, checkpoint checksums and seed
/// derivation, all of which must be stable across runs and platforms.
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

constexpr std::uint64_t fnv1a64(std::string_view text, std::uint64_t h = kFnvOffset) {
  for (unsigned char ch : text) {
    h ^= ch;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a64_bytes(std::span<const std::byte> bytes, std::uint64_t h = kFnvOffset) {
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= kFnvPrime;
  }
  return h;
}

// splitmix64 finalizer; spreads nearby integers across the whole seed space.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Named seed derivation: every random stream is `derive_seed(top, "component", ...)`.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
  return mix64(seed ^ fnv1a64(name));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view name, std::uint64_t a) {
  return mix64(derive_seed(seed, name) ^ mix64(a));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view name, std::uint64_t a,
                                    std::uint64_t b) {
  return mix64(derive_seed(seed, name, a) ^ mix64(b + 0x632be59bd9b4e019ULL));
}

}  // namespace roadfix
