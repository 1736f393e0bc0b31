#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace superbranch {

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Identifies one reproducible random stream; replicate r of a run uses
// RngStream{master_seed, r}.
struct RngStream {
  std::uint64_t master_seed = 0;
  std::uint64_t stream_index = 0;

  Engine engine() const {
    std::uint64_t s = splitmix64(master_seed ^ splitmix64(stream_index + 0x632be59bd9b4e019ULL));
    std::uint32_t words[8];
    for (auto& w : words) {
      s = splitmix64(s);
      w = static_cast<std::uint32_t>(s >> 32);
    }
    std::seed_seq seq(std::begin(words), std::end(words));
    return Engine(seq);
  }

  bool operator==(const RngStream&) const = default;
};

// Uniform on [0, 1) with 53 random bits.
inline double uniform01(Engine& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double exponential(Engine& rng, double rate) { return -std::log1p(-uniform01(rng)) / rate; }

inline std::uint64_t uniform_index(Engine& rng, std::uint64_t n) {
  return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng);
}

// Index drawn from cumulative weights (last entry is the total).
template <class Cumulative>
inline std::size_t pick_cumulative(Engine& rng, const Cumulative& cum) {
  const double u = uniform01(rng) * cum.back();
  std::size_t i = 0;
  while (i + 1 < cum.size() && u >= cum[i]) ++i;
  return i;
}

}  // namespace superbranch
