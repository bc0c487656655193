#pragma once

// Drop-in scalar that tallies every multiplication routed through it. Running
// the real kernels on Tensor<CountingScalar> yields the measured MAC count the
// analytic audit must reproduce. uncounted_mul bypasses the tally, mirroring
// the convention that normalization scaling is not counted.

#include <cmath>
#include <cstdint>

namespace stalab {

struct CountingScalar {
  double v = 0;
  static inline uint64_t multiplies = 0;

  CountingScalar() = default;
  explicit CountingScalar(double x) : v(x) {}
  explicit CountingScalar(float x) : v(x) {}
  explicit CountingScalar(int x) : v(x) {}

  static void reset() { multiplies = 0; }

  friend CountingScalar operator+(CountingScalar a, CountingScalar b) {
    return CountingScalar(a.v + b.v);
  }
  friend CountingScalar operator-(CountingScalar a, CountingScalar b) {
    return CountingScalar(a.v - b.v);
  }
  friend CountingScalar operator-(CountingScalar a) { return CountingScalar(-a.v); }
  friend CountingScalar operator*(CountingScalar a, CountingScalar b) {
    ++multiplies;
    return CountingScalar(a.v * b.v);
  }
  friend CountingScalar operator/(CountingScalar a, CountingScalar b) {
    return CountingScalar(a.v / b.v);
  }
  CountingScalar& operator+=(CountingScalar o) {
    v += o.v;
    return *this;
  }
  CountingScalar& operator-=(CountingScalar o) {
    v -= o.v;
    return *this;
  }
  CountingScalar& operator*=(CountingScalar o) {
    ++multiplies;
    v *= o.v;
    return *this;
  }
  friend bool operator==(CountingScalar a, CountingScalar b) { return a.v == b.v; }
  friend bool operator!=(CountingScalar a, CountingScalar b) { return a.v != b.v; }
  friend bool operator<(CountingScalar a, CountingScalar b) { return a.v < b.v; }
  friend bool operator<=(CountingScalar a, CountingScalar b) { return a.v <= b.v; }
  friend bool operator>(CountingScalar a, CountingScalar b) { return a.v > b.v; }
  friend bool operator>=(CountingScalar a, CountingScalar b) { return a.v >= b.v; }
};

inline CountingScalar uncounted_mul(CountingScalar a, CountingScalar b) {
  return CountingScalar(a.v * b.v);
}
inline CountingScalar exp(CountingScalar a) { return CountingScalar(std::exp(a.v)); }
inline CountingScalar log(CountingScalar a) { return CountingScalar(std::log(a.v)); }
inline CountingScalar sqrt(CountingScalar a) { return CountingScalar(std::sqrt(a.v)); }
inline CountingScalar tanh(CountingScalar a) { return CountingScalar(std::tanh(a.v)); }
inline double to_double(CountingScalar a) { return a.v; }

}  // namespace stalab
