#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace spba {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for an independent stream `index` under `base` (base xor index, mixed).
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return mix_seed(base ^ index);
}

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// FNV-1a of `bytes` as 16 lowercase hex digits.
inline std::string hash_hex(std::string_view bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::uint64_t h = fnv1a(bytes);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = digits[h & 0xf];
  return out;
}

}  // namespace spba
