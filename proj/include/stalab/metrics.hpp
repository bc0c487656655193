#pragma once

// Segmentation metrics over integer label maps: Dice similarity and IoU,
// per class and averaged.

#include <cstdint>
#include <string>
#include <vector>

#include "stalab/tensor.hpp"

namespace stalab {

// Per-pixel integer class ids for a batch of masks.
struct LabelMap {
  int64_t n = 0, h = 0, w = 0;
  std::vector<int32_t> ids;  // row-major [n][h][w]

  int64_t numel() const { return n * h * w; }
  int32_t at(int64_t ni, int64_t r, int64_t c) const {
    return ids[static_cast<size_t>((ni * h + r) * w + c)];
  }
  void check(int64_t num_classes) const {
    if (static_cast<int64_t>(ids.size()) != numel())
      throw ShapeError("label map: " + std::to_string(ids.size()) + " ids for " +
                       std::to_string(n) + "x" + std::to_string(h) + "x" + std::to_string(w));
    for (int32_t v : ids)
      if (v < 0 || v >= num_classes)
        throw ValueError("label map: class id " + std::to_string(v) + " outside [0," +
                         std::to_string(num_classes) + ")");
  }
};

// Argmax over the class axis of [N,K,H,W] probabilities; first maximum wins.
template <typename T>
LabelMap argmax_labels(const Tensor<T>& probs) {
  if (probs.rank() != 4) throw ShapeError("argmax_labels: probs " + shape_str(probs.shape()));
  const int64_t n = probs.dim(0), k = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
  LabelMap out;
  out.n = n;
  out.h = h;
  out.w = w;
  out.ids.resize(static_cast<size_t>(n * h * w));
  const int64_t hw = h * w;
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t i = 0; i < hw; ++i) {
      int32_t best = 0;
      T bv = probs.data()[static_cast<size_t>(ni * k * hw + i)];
      for (int64_t c = 1; c < k; ++c) {
        const T v = probs.data()[static_cast<size_t>((ni * k + c) * hw + i)];
        if (v > bv) {
          bv = v;
          best = static_cast<int32_t>(c);
        }
      }
      out.ids[static_cast<size_t>(ni * hw + i)] = best;
    }
  return out;
}

struct ClassScores {
  std::vector<double> per_class;
  double mean = 0;
};

namespace detail {

struct Overlap {
  std::vector<int64_t> pred, gt, both;
};

inline Overlap overlap_counts(const LabelMap& pred, const LabelMap& gt, int64_t k) {
  if (pred.n != gt.n || pred.h != gt.h || pred.w != gt.w)
    throw ShapeError("metrics: prediction extent " + std::to_string(pred.h) + "x" +
                     std::to_string(pred.w) + " vs ground truth " + std::to_string(gt.h) + "x" +
                     std::to_string(gt.w));
  pred.check(k);
  gt.check(k);
  Overlap o;
  o.pred.assign(static_cast<size_t>(k), 0);
  o.gt.assign(static_cast<size_t>(k), 0);
  o.both.assign(static_cast<size_t>(k), 0);
  for (size_t i = 0; i < pred.ids.size(); ++i) {
    const int32_t p = pred.ids[i], g = gt.ids[i];
    ++o.pred[static_cast<size_t>(p)];
    ++o.gt[static_cast<size_t>(g)];
    if (p == g) ++o.both[static_cast<size_t>(p)];
  }
  return o;
}

}  // namespace detail

// Dice per class: 2|P∩G| / (|P|+|G|); both sets empty counts as a perfect 1.
inline ClassScores dice_score(const LabelMap& pred, const LabelMap& gt, int64_t num_classes) {
  auto o = detail::overlap_counts(pred, gt, num_classes);
  ClassScores s;
  for (int64_t c = 0; c < num_classes; ++c) {
    const int64_t denom = o.pred[static_cast<size_t>(c)] + o.gt[static_cast<size_t>(c)];
    s.per_class.push_back(denom == 0
                              ? 1.0
                              : 2.0 * static_cast<double>(o.both[static_cast<size_t>(c)]) /
                                    static_cast<double>(denom));
    s.mean += s.per_class.back();
  }
  s.mean /= static_cast<double>(num_classes);
  return s;
}

// IoU per class: |P∩G| / |P∪G|; both sets empty counts as 1.
inline ClassScores iou_score(const LabelMap& pred, const LabelMap& gt, int64_t num_classes) {
  auto o = detail::overlap_counts(pred, gt, num_classes);
  ClassScores s;
  for (int64_t c = 0; c < num_classes; ++c) {
    const int64_t uni = o.pred[static_cast<size_t>(c)] + o.gt[static_cast<size_t>(c)] -
                        o.both[static_cast<size_t>(c)];
    s.per_class.push_back(uni == 0 ? 1.0
                                   : static_cast<double>(o.both[static_cast<size_t>(c)]) /
                                         static_cast<double>(uni));
    s.mean += s.per_class.back();
  }
  s.mean /= static_cast<double>(num_classes);
  return s;
}

}  // namespace stalab
