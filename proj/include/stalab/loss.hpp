#pragma once

// Training losses on [N,K,H,W] class probabilities: clamped cross-entropy,
// soft Dice, and their weighted sum.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stalab/metrics.hpp"
#include "stalab/tensor.hpp"

namespace stalab {

namespace detail {

template <typename T>
void check_probs_vs_labels(const Tensor<T>& probs, const LabelMap& target, const char* who) {
  if (probs.rank() != 4)
    throw ShapeError(std::string(who) + ": probs " + shape_str(probs.shape()));
  if (probs.dim(0) != target.n || probs.dim(2) != target.h || probs.dim(3) != target.w)
    throw ShapeError(std::string(who) + ": probs " + shape_str(probs.shape()) + " vs labels " +
                     std::to_string(target.n) + "x" + std::to_string(target.h) + "x" +
                     std::to_string(target.w));
  target.check(probs.dim(1));
}

}  // namespace detail

// Mean over all pixels of -log(p[target class]), with the probability clamped
// from below so an exact zero stays finite. Clamped pixels get zero gradient.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probs, const LabelMap& target,
                        T clamp_floor = T(1e-12)) {
  detail::check_probs_vs_labels(probs, target, "cross_entropy");
  const int64_t n = probs.dim(0), k = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
  const int64_t hw = h * w, pixels = n * hw;
  double acc = 0;
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t i = 0; i < hw; ++i) {
      const int64_t c = target.ids[static_cast<size_t>(ni * hw + i)];
      T p = probs.data()[static_cast<size_t>((ni * k + c) * hw + i)];
      if (p < clamp_floor) p = clamp_floor;
      acc -= to_double(std::log(p));
    }
  Tensor<T> res = detail::make_op_node<T>({}, {static_cast<T>(acc / static_cast<double>(pixels))},
                                          {probs.node()});
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* px = probs.node().get();
    LabelMap tgt = target;
    self->backward = [self, px, tgt, n, k, hw, pixels, clamp_floor]() {
      px->ensure_grad();
      const T g = self->grad[0];
      const T inv = T(1) / static_cast<T>(pixels);
      for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t i = 0; i < hw; ++i) {
          const int64_t c = tgt.ids[static_cast<size_t>(ni * hw + i)];
          const size_t at = static_cast<size_t>((ni * k + c) * hw + i);
          const T p = px->data[at];
          if (p >= clamp_floor) px->grad[at] -= g * inv / p;
        }
    };
  }
  return res;
}

// Soft Dice loss: 1 - mean over classes of (2*sum(p*g)+eps) / (sum(p)+sum(g)+eps),
// with sums over every pixel in the batch and g the one-hot target. A class
// absent from both prediction mass and target scores eps/eps = 1.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const LabelMap& target, T eps = T(1e-5)) {
  detail::check_probs_vs_labels(probs, target, "dice_loss");
  const int64_t n = probs.dim(0), k = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
  const int64_t hw = h * w;
  std::vector<T> num(static_cast<size_t>(k), eps), den(static_cast<size_t>(k), eps);
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t c = 0; c < k; ++c) {
      const T* p = probs.data().data() + (ni * k + c) * hw;
      T inter = T(0), psum = T(0);
      int64_t gsum = 0;
      for (int64_t i = 0; i < hw; ++i) {
        psum += p[i];
        if (target.ids[static_cast<size_t>(ni * hw + i)] == c) {
          inter += p[i];
          ++gsum;
        }
      }
      num[static_cast<size_t>(c)] += T(2) * inter;
      den[static_cast<size_t>(c)] += psum + static_cast<T>(gsum);
    }
  double mean_dice = 0;
  for (int64_t c = 0; c < k; ++c)
    mean_dice += to_double(num[static_cast<size_t>(c)]) / to_double(den[static_cast<size_t>(c)]);
  mean_dice /= static_cast<double>(k);
  Tensor<T> res = detail::make_op_node<T>({}, {static_cast<T>(1.0 - mean_dice)}, {probs.node()});
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* px = probs.node().get();
    LabelMap tgt = target;
    self->backward = [self, px, tgt, n, k, hw, num, den]() {
      px->ensure_grad();
      const T g = self->grad[0];
      // d(loss)/dp_ci = -(2*[g_ci] * den_c - num_c) / (k * den_c^2)
      std::vector<T> hit(static_cast<size_t>(k)), miss(static_cast<size_t>(k));
      for (int64_t c = 0; c < k; ++c) {
        const T d = den[static_cast<size_t>(c)];
        miss[static_cast<size_t>(c)] = num[static_cast<size_t>(c)] / (static_cast<T>(k) * d * d);
        hit[static_cast<size_t>(c)] =
            miss[static_cast<size_t>(c)] - T(2) / (static_cast<T>(k) * d);
      }
      for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t c = 0; c < k; ++c) {
          T* gp = px->grad.data() + (ni * k + c) * hw;
          for (int64_t i = 0; i < hw; ++i) {
            const bool on = tgt.ids[static_cast<size_t>(ni * hw + i)] == c;
            gp[i] += g * (on ? hit[static_cast<size_t>(c)] : miss[static_cast<size_t>(c)]);
          }
        }
    };
  }
  return res;
}

// Parts of the composite objective, kept separate for per-iteration logging.
template <typename T>
struct LossTerms {
  Tensor<T> total, ce, dice;
};

template <typename T>
LossTerms<T> composite_loss(const Tensor<T>& probs, const LabelMap& target, T w_ce, T w_dice,
                            T dice_eps = T(1e-5)) {
  LossTerms<T> out;
  out.ce = cross_entropy(probs, target);
  out.dice = dice_loss(probs, target, dice_eps);
  out.total = add(mul_scalar(out.ce, w_ce), mul_scalar(out.dice, w_dice));
  return out;
}

}  // namespace stalab
