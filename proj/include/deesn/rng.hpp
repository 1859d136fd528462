#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace deesn {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; a bijective avalanche mix on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Folds a key tuple into a single seed. Order matters: (a, b) != (b, a).
constexpr std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> key) {
  std::uint64_t h = mix64(master);
  for (std::uint64_t k : key) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

// Tags for the independent random streams drawn per ensemble member.
enum class StreamTag : std::uint64_t {
  kRecurrent = 1,
  kInput = 2,
  kGibbs = 3,
  kPredictive = 4,
  kSimulator = 5,
  kGenetic = 6,
  kSynthetic = 7,
};

// A generator keyed by (master seed, member, layer, tag) so that any member's
// draws are reproducible without replaying the others.
inline Rng keyed_stream(std::uint64_t master, std::uint64_t member, std::uint64_t layer, StreamTag tag,
                        std::uint64_t attempt = 0) {
  return Rng(derive_seed(master, {member, layer, static_cast<std::uint64_t>(tag), attempt}));
}

inline double uniform01(Rng& rng) {
  // 53 random bits -> [0, 1)
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace deesn
