#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace qlmf {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// child = mix(...mix(mix(master ^ fnv(tag)) ^ i0) ^ i1 ...)
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                    std::initializer_list<std::uint64_t> indices = {}) noexcept {
  std::uint64_t h = mix64(master ^ fnv1a64(tag));
  for (std::uint64_t i : indices) h = mix64(h ^ i);
  return h;
}

}  // namespace qlmf
