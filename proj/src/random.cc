#include "detfuse/random.h"

#include <cmath>
#include <numbers>

#include "detfuse/errors.h"

namespace detfuse {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng Rng::substream(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return Rng(splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index));
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

bool Rng::bernoulli(double p) { return uniform() < p; }

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::poisson(double lambda) {
  if (!(lambda >= 0.0) || lambda > 500.0) {
    throw InvalidArgument("poisson rate must lie in [0, 500]");
  }
  const double limit = std::exp(-lambda);
  std::uint64_t k = 0;
  double p = uniform();
  while (p > limit) {
    ++k;
    p *= uniform();
  }
  return k;
}

double Rng::truncated_normal_unit(double mean, double spread) {
  if (spread == 0.0) return mean;
  for (;;) {
    const double x = mean + spread * normal();
    if (x > 0.0 && x <= 1.0) return x;
  }
}

}  // namespace detfuse
