#pragma once

#include <cstdint>

namespace shiftlab {

// Counter-based deterministic generator: draw i is a 64-bit hash of
// (seed, i). The same seed yields the same sequence on every platform
// and the stream can be forked into independent children by key.
// Constants and derivations are documented in docs/formats.md.
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  explicit RngStream(std::uint64_t s = 0) : seed(s) {}

  std::uint64_t next_u64();
  // uniform in [0, 1), 53-bit resolution
  double next_double();
  double next_uniform(double lo, double hi);
  // standard normal via Box-Muller (two uniforms per draw, nothing cached)
  double next_normal();
  // uniform in {0, ..., n-1}, unbiased
  std::uint64_t next_below(std::uint64_t n);
  // Beta(a, a) by Johnk's method, a > 0
  double next_beta(double a);
  bool next_bernoulli(double p);
  // independent substream; children with distinct keys never collide
  RngStream child(std::uint64_t key) const;
};

}  // namespace shiftlab
