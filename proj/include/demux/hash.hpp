#ifndef DEMUX_HASH_HPP
#define DEMUX_HASH_HPP

#include <cstdint>
#include <string_view>

namespace demux {

// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace demux

#endif  // DEMUX_HASH_HPP
