#pragma once

#include <cstddef>
#include <cstdint>

namespace qfl {

inline constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

// FNV-1a 64-bit over a byte range; `state` allows incremental hashing.
inline std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t len,
                             std::uint64_t state = kFnvOffsetBasis) {
  for (std::size_t i = 0; i < len; ++i) {
    state ^= data[i];
    state *= kFnvPrime;
  }
  return state;
}

}  // namespace qfl
