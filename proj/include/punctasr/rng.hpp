#pragma once

#include <cstdint>
#include <initializer_list>

namespace punctasr {

// Derives an independent stream seed from a base seed and a path of indices
// (splitmix64 finalizer applied per component).
inline std::uint64_t mix_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t z = base;
  for (std::uint64_t p : path) {
    z += 0x9e3779b97f4a7c15ULL + p;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
  }
  return z;
}

}  // namespace punctasr
