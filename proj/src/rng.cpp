#include "shiftlab/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace shiftlab {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// SplitMix64 finalizer: invertible 64-bit mix with full avalanche.
std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t RngStream::next_u64() {
  ++counter;
  return mix64(seed + counter * kGolden);
}

double RngStream::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_uniform(double lo, double hi) {
  return lo + (hi - lo) * next_double();
}

double RngStream::next_normal() {
  // Box-Muller; u1 shifted away from 0 so log stays finite.
  double u1 = next_double();
  double u2 = next_double();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(2.0 * M_PI * u2);
}

std::uint64_t RngStream::next_below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("next_below: n must be positive");
  // modulo with rejection of the biased tail
  const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
  std::uint64_t u;
  do {
    u = next_u64();
  } while (u >= limit);
  return u % n;
}

double RngStream::next_beta(double a) {
  if (!(a > 0.0)) throw std::invalid_argument("next_beta: shape must be positive");
  // Johnk: accept (u^(1/a), v^(1/a)) when the pair lands inside the simplex.
  for (;;) {
    const double x = std::pow(next_double(), 1.0 / a);
    const double y = std::pow(next_double(), 1.0 / a);
    const double s = x + y;
    if (s > 0.0 && s <= 1.0) return x / s;
  }
}

bool RngStream::next_bernoulli(double p) { return next_double() < p; }

RngStream RngStream::child(std::uint64_t key) const {
  RngStream c(mix64(seed ^ mix64(key + kGolden)));
  return c;
}

}  // namespace shiftlab
