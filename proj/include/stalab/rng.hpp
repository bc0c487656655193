#pragma once

#include <cmath>
#include <cstdint>

namespace stalab {

// splitmix64 step (Steele et al.). Used to expand seeds and derive
// substreams; one step per call, mutates the passed state.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic substream seed for (purpose a, purpose b), e.g. (epoch, sample).
inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0) {
  uint64_t s = seed;
  uint64_t h = splitmix64(s);
  s = h ^ (a + 0x9e3779b97f4a7c15ull);
  h = splitmix64(s);
  s = h ^ (b + 0xbf58476d1ce4e5b9ull);
  return splitmix64(s);
}

// xorshift64* generator (Marsaglia xorshift with a multiplicative output
// scramble, multiplier 0x2545f4914f6cdd1d). 64-bit state, seeded through
// splitmix64 so small or zero user seeds still give well-mixed streams.
// Identical seed produces an identical stream, bit for bit.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    state_ = splitmix64(sm);
    if (state_ == 0) state_ = 0x9e3779b97f4a7c15ull;  // state must never be zero
  }

  uint64_t next_u64() {
    uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  // Uniform in [0,1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [0,n), n > 0. Fixed-point multiply, no rejection loop.
  uint64_t next_below(uint64_t n) {
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  bool bernoulli(double p) { return next_double() < p; }

  // Box-Muller; draws two uniforms per call, keeps no cached spare so the
  // stream position is a fixed function of the call count.
  double next_normal() {
    double u1 = 1.0 - next_double();  // (0,1], keeps log finite
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.28318530717958647692 * u2);
  }

 private:
  uint64_t state_;
};

}  // namespace stalab
