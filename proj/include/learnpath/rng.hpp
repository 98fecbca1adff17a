#pragma once

#include <cstdint>
#include <random>

namespace learnpath {

/// Independent random streams fanned out from one master seed, so that
/// changing how much randomness one stage consumes never shifts another.
enum class Stream : std::uint64_t {
  kMeans = 1,
  kSampling = 2,
  kSplit = 3,
  kFlips = 4,
  kPerturb = 5,
  kInit = 6,
  kShuffle = 7,
  kPairs = 8,
  kRun = 9,
  kStudent = 10,
};

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, Stream stream,
                                 std::uint64_t sub = 0) noexcept {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
  return splitmix64(h ^ sub);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t master, Stream stream, std::uint64_t sub = 0) {
  return Rng(derive_seed(master, stream, sub));
}

}  // namespace learnpath
