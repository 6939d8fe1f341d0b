#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace detfuse {

// Portable seeded generator. The engine is std::mt19937_64, whose output
// sequence is fixed by the C++ standard; all distributions are implemented
// here rather than taken from <random>, whose algorithms vary by vendor.
inline constexpr std::string_view kRngDescription =
    "mt19937_64 seeded with splitmix64(seed, stream, index); uniform = top 53 bits / 2^53; "
    "normal = Box-Muller (cosine branch); Poisson = Knuth multiplication; "
    "truncated normal = rejection";

std::uint64_t splitmix64(std::uint64_t x) noexcept;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Independent substream keyed by (seed, stream, index).
  static Rng substream(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

  std::uint64_t next_u64() { return engine_(); }
  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);    // [lo, hi)
  bool bernoulli(double p);                // true with probability p
  double normal();                         // N(0, 1)
  std::uint64_t poisson(double lambda);
  // Normal(mean, spread) conditioned on (0, 1]. spread == 0 returns mean.
  double truncated_normal_unit(double mean, double spread);

 private:
  std::mt19937_64 engine_;
};

}  // namespace detfuse
