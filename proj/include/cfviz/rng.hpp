#pragma once

#include <cstdint>
#include <string_view>

namespace cfviz {

// splitmix64 mixing step (Vigna). All randomness in the project flows through
// this generator instead of <random> distributions, whose draw sequences are
// implementation-defined; this keeps datasets, initializations and shuffles
// reproducible bit-for-bit on any platform.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Derives an independent stream from a master seed. Used for per-record
// dataset generation (stream = record index), per-epoch shuffles, and the
// pipeline's per-stage sub-seeds (stream = fnv1a64(stage name)).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t s = seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
  return splitmix64(s);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view stream_name) {
  return mix_seed(seed, fnv1a64(stream_name));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

 private:
  std::uint64_t state_;
};

}  // namespace cfviz
