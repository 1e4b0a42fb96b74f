#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace semlink {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent, reproducible stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                                    std::uint64_t index = 0) {
  return mix64(mix64(mix64(base) ^ stream) ^ index);
}

// FNV-1a; turns a name into a stream tag that is stable across platforms.
constexpr std::uint64_t stream_tag(std::string_view name) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline Rng make_rng(std::uint64_t base, std::uint64_t stream, std::uint64_t index = 0) {
  return Rng(derive_seed(base, stream, index));
}

}  // namespace semlink
