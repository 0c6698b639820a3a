#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace lumvit {

// All randomness in the pipeline flows through named substreams derived from
// one master seed. A substream is identified by (seed, purpose, a, b); the
// derivation is a small hash chain, so adding a new consumer never perturbs
// the draws of existing ones.

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_str(std::string_view s) {
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = detail::splitmix64(master ^ detail::hash_str(purpose));
  h = detail::splitmix64(h ^ a);
  h = detail::splitmix64(h ^ b);
  return h;
}

inline std::mt19937_64 make_engine(std::uint64_t master, std::string_view purpose,
                                   std::uint64_t a = 0, std::uint64_t b = 0) {
  return std::mt19937_64(derive_seed(master, purpose, a, b));
}

}  // namespace lumvit
