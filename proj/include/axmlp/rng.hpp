#pragma once

#include <cstdint>
#include <initializer_list>

namespace axmlp {

/// Deterministic seed derivation so per-sample streams depend only on
/// (base seed, identifiers), never on processing order.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t s = mix64(base);
  for (auto k : keys) s = mix64(s ^ mix64(k));
  return s;
}

inline std::uint64_t hash_string(const char* s) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (; *s; ++s) h = (h ^ static_cast<unsigned char>(*s)) * 1099511628211ULL;
  return h;
}

}  // namespace axmlp
