#pragma once

// Central-difference gradient verification, double precision. Shared by the
// unit tests and the acceptance runner, so it reports rather than asserts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stalab/rng.hpp"
#include "stalab/tensor.hpp"

namespace testsupport {

struct GradCheckResult {
  double max_rel = 0.0;
  std::string worst;
  bool ok(double tol) const { return max_rel < tol; }
};

// Compares reverse-mode gradients of `make_loss` (a scalar-valued callable
// rebuilding the graph each call) against central differences for every
// element of every tensor in `params`. Relative error uses a floored
// denominator so near-zero gradients compare on absolute terms.
template <typename F>
GradCheckResult check_gradients(const std::vector<stalab::Tensor<double>*>& params, F make_loss,
                                double h = 1e-5, double floor = 1e-3) {
  for (auto* p : params) p->zero_grad();
  make_loss().backward();
  std::vector<std::vector<double>> ad;
  ad.reserve(params.size());
  for (auto* p : params) ad.push_back(p->grad());

  GradCheckResult res;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& t = *params[pi];
    for (int64_t i = 0; i < t.numel(); ++i) {
      const double keep = t.data()[static_cast<size_t>(i)];
      t.data()[static_cast<size_t>(i)] = keep + h;
      const double fp = make_loss().item();
      t.data()[static_cast<size_t>(i)] = keep - h;
      const double fm = make_loss().item();
      t.data()[static_cast<size_t>(i)] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = ad[pi][static_cast<size_t>(i)];
      const double denom = std::max({std::abs(a), std::abs(fd), floor});
      const double rel = std::abs(a - fd) / denom;
      if (rel > res.max_rel) {
        res.max_rel = rel;
        res.worst = "param " + std::to_string(pi) + "[" + std::to_string(i) +
                    "] ad=" + std::to_string(a) + " fd=" + std::to_string(fd);
      }
    }
  }
  return res;
}

inline void fill_uniform(stalab::Tensor<double>& t, stalab::Rng& rng, double lo = -1.0,
                         double hi = 1.0) {
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
}

}  // namespace testsupport
