#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace dpprompt {

inline constexpr std::uint64_t kFnvOffsetBasis = 14695981039346656037ULL;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

// 64-bit FNV-1a. `state` allows chaining several byte ranges into one digest.
constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state = kFnvOffsetBasis) {
  for (unsigned char c : bytes) {
    state ^= c;
    state *= kFnvPrime;
  }
  return state;
}

// Feeds the 8 little-endian bytes of `value`.
constexpr std::uint64_t fnv1a64_u64(std::uint64_t value, std::uint64_t state = kFnvOffsetBasis) {
  for (int i = 0; i < 8; ++i) {
    state ^= (value >> (8 * i)) & 0xffU;
    state *= kFnvPrime;
  }
  return state;
}

std::string hex64(std::uint64_t value);

// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view text);

}  // namespace dpprompt
