#pragma once

// Counter-based deterministic RNG. Every pulse/particle stream is derived
// from (seed, stream index) through splitmix64, so results are reproducible
// bit-for-bit regardless of thread count or platform. No std:: distributions
// anywhere: uniform doubles are built directly from the high 53 bits.

#include <cstdint>

namespace subqm {

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // Decorrelate trivial seeds.
    splitmix64(state_);
    splitmix64(state_);
  }

  // Substream derived from this stream and an index; independent of how many
  // draws were taken from the parent.
  Rng substream(uint64_t index) const {
    uint64_t s = state_ ^ (0x9e3779b97f4a7c15ULL * (index + 1));
    Rng r(0);
    r.state_ = s;
    splitmix64(r.state_);
    return r;
  }

  uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1).
  double next_double() { return (next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (a, b).
  double uniform(double a, double b) { return a + (b - a) * next_double(); }

private:
  uint64_t state_;
};

}  // namespace subqm
