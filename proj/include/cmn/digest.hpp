#pragma once

// FNV-1a digests over raw parameter bytes, used to verify that frozen
// networks stay bit-identical across training phases.

#include <cstdint>
#include <cstring>
#include <vector>

namespace cmn {

inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <class T>
std::uint64_t digest_values(const std::vector<T>& v, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(v.data(), v.size() * sizeof(T), h);
}

template <class Params>
std::uint64_t digest_params(const Params& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* t : p.all()) h = digest_values(t->data(), h);
  return h;
}

}  // namespace cmn
