#pragma once

// Training engine: learning-rate schedules, flip/rotate augmentation, SGD
// with momentum and weight decay, and the batched training loop.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stalab/data.hpp"
#include "stalab/loss.hpp"
#include "stalab/model.hpp"
#include "stalab/rng.hpp"
#include "stalab/tensor.hpp"

namespace stalab {

// Polynomial decay lr0 * (1 - t/N)^0.9 over t in [0, N].
inline double poly_lr(double lr0, int64_t t, int64_t total) {
  if (total <= 0) throw ValueError("poly_lr: total " + std::to_string(total) + " <= 0");
  if (t < 0 || t > total)
    throw ValueError("poly_lr: step " + std::to_string(t) + " outside [0," +
                     std::to_string(total) + "]");
  return lr0 * std::pow(1.0 - static_cast<double>(t) / static_cast<double>(total), 0.9);
}

// Cosine decay from lr0 at t=0 to lr_min at t=N.
inline double cosine_lr(double lr0, int64_t t, int64_t total, double lr_min = 0.0) {
  if (total <= 0) throw ValueError("cosine_lr: total " + std::to_string(total) + " <= 0");
  if (t < 0 || t > total)
    throw ValueError("cosine_lr: step " + std::to_string(t) + " outside [0," +
                     std::to_string(total) + "]");
  if (t == 0) return lr0;
  if (t == total) return lr_min;  // cos(pi) is not exactly -1 in floating point
  const double phase = 3.14159265358979323846 * static_cast<double>(t) / static_cast<double>(total);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(phase));
}

enum class Schedule { poly, cosine };

struct TrainConfig {
  int64_t epochs = 1;
  int64_t batch_size = 8;
  double lr_initial = 1e-2;
  Schedule schedule = Schedule::poly;
  // With poly_per_epoch the poly horizon resets every epoch instead of
  // spanning the whole run.
  bool poly_per_epoch = false;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double w_ce = 0.4;
  double w_dice = 0.6;
  double dice_eps = 1e-5;
  double aug_prob = 0.5;
  uint64_t seed = 1;

  void validate() const {
    if (epochs < 1) throw ValueError("train config: epochs " + std::to_string(epochs) + " < 1");
    if (batch_size < 1)
      throw ValueError("train config: batch size " + std::to_string(batch_size) + " < 1");
    if (lr_initial <= 0) throw ValueError("train config: initial lr must be positive");
    if (std::abs(w_ce + w_dice - 1.0) > 1e-9)
      throw ValueError("train config: loss weights " + std::to_string(w_ce) + " + " +
                       std::to_string(w_dice) + " do not sum to 1");
    if (aug_prob < 0 || aug_prob > 1)
      throw ValueError("train config: augment probability outside [0,1]");
    if (momentum < 0 || momentum >= 1)
      throw ValueError("train config: momentum outside [0,1)");
    if (weight_decay < 0) throw ValueError("train config: negative weight decay");
  }
};

// In-place quarter turn, clockwise; a HxW sample becomes WxH.
inline void rotate90(Sample& s) {
  const int64_t h = s.h, w = s.w;
  std::vector<float> img(s.image.size());
  std::vector<int32_t> msk(s.mask.size());
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      const size_t from = static_cast<size_t>(r * w + c);
      const size_t to = static_cast<size_t>(c * h + (h - 1 - r));
      img[to] = s.image[from];
      msk[to] = s.mask[from];
    }
  s.image = std::move(img);
  s.mask = std::move(msk);
  std::swap(s.h, s.w);
}

inline void flip_horizontal(Sample& s) {
  for (int64_t r = 0; r < s.h; ++r)
    for (int64_t c = 0; c < s.w / 2; ++c) {
      std::swap(s.image[static_cast<size_t>(r * s.w + c)],
                s.image[static_cast<size_t>(r * s.w + (s.w - 1 - c))]);
      std::swap(s.mask[static_cast<size_t>(r * s.w + c)],
                s.mask[static_cast<size_t>(r * s.w + (s.w - 1 - c))]);
    }
}

// With probability p flips horizontally, and independently with probability p
// rotates by k*90 degrees, k drawn uniformly from {1,2,3}. Image and mask get
// the identical transform.
inline void augment_sample(Sample& s, Rng& rng, double p) {
  if (rng.bernoulli(p)) flip_horizontal(s);
  if (rng.bernoulli(p)) {
    const int64_t k = 1 + static_cast<int64_t>(rng.next_below(3));
    for (int64_t i = 0; i < k; ++i) rotate90(s);
  }
}

// Packs samples into a [B,1,H,W] input tensor and a label map.
template <typename T>
std::pair<Tensor<T>, LabelMap> make_batch(const std::vector<Sample>& samples) {
  if (samples.empty()) throw ValueError("make_batch: no samples");
  const int64_t b = static_cast<int64_t>(samples.size());
  const int64_t h = samples[0].h, w = samples[0].w;
  auto x = Tensor<T>::zeros({b, 1, h, w});
  LabelMap y;
  y.n = b;
  y.h = h;
  y.w = w;
  y.ids.resize(static_cast<size_t>(b * h * w));
  for (int64_t i = 0; i < b; ++i) {
    const Sample& s = samples[static_cast<size_t>(i)];
    if (s.h != h || s.w != w)
      throw ShapeError("make_batch: sample " + std::to_string(i) + " extent " +
                       std::to_string(s.h) + "x" + std::to_string(s.w) + " vs " +
                       std::to_string(h) + "x" + std::to_string(w));
    for (int64_t j = 0; j < h * w; ++j) {
      x.data()[static_cast<size_t>(i * h * w + j)] = static_cast<T>(s.image[static_cast<size_t>(j)]);
      y.ids[static_cast<size_t>(i * h * w + j)] = s.mask[static_cast<size_t>(j)];
    }
  }
  return {x, y};
}

// Momentum buffers, one per learnable parameter in registry order.
template <typename T>
struct SgdState {
  std::vector<std::vector<T>> velocity;

  static SgdState make(StaUnet<T>& net) {
    SgdState st;
    for_each_param(net, [&](const std::string&, Tensor<T>& p, bool learnable) {
      if (learnable) st.velocity.emplace_back(static_cast<size_t>(p.numel()), T(0));
    });
    return st;
  }
};

// v <- momentum*v + grad + wd*param; param <- param - lr*v. Parameters with
// no gradient this step (nothing reached them in the backward pass) are
// treated as having a zero gradient.
template <typename T>
void sgd_step(StaUnet<T>& net, SgdState<T>& state, double lr, double momentum,
              double weight_decay) {
  size_t slot = 0;
  for_each_param(net, [&](const std::string& name, Tensor<T>& p, bool learnable) {
    if (!learnable) return;
    if (slot >= state.velocity.size())
      throw ValueError("sgd_step: optimizer state has fewer slots than parameters");
    std::vector<T>& v = state.velocity[slot++];
    if (static_cast<int64_t>(v.size()) != p.numel())
      throw ShapeError("sgd_step: state size mismatch for " + name);
    const T* g = p.has_grad() ? p.grad().data() : nullptr;
    T* w = p.data().data();
    const T mom = static_cast<T>(momentum), wd = static_cast<T>(weight_decay),
            step = static_cast<T>(lr);
    for (size_t i = 0; i < v.size(); ++i) {
      v[i] = mom * v[i] + (g ? g[i] : T(0)) + wd * w[i];
      w[i] -= step * v[i];
    }
  });
  if (slot != state.velocity.size())
    throw ValueError("sgd_step: optimizer state has more slots than parameters");
}

// One metrics row per iteration; serialized later as
// epoch,iter,lr,loss,ce,dice_loss.
struct TrainRow {
  int64_t epoch = 0;
  int64_t iter = 0;
  double lr = 0;
  double loss = 0, ce = 0, dice = 0;
};

struct TrainReport {
  std::vector<TrainRow> rows;
  int64_t iterations = 0;
};

// Raised when the loss turns non-finite; carries the offending batch index.
struct TrainDiverged : ValueError {
  explicit TrainDiverged(const std::string& msg) : ValueError(msg) {}
};

namespace detail {

inline uint64_t shuffle_seed(uint64_t seed, int64_t epoch) {
  return derive_seed(seed ^ 0x73687566666c65ull, static_cast<uint64_t>(epoch), 0);
}

inline uint64_t augment_seed(uint64_t seed, int64_t epoch, int64_t sample_index) {
  return derive_seed(seed ^ 0x6175676d656e74ull, static_cast<uint64_t>(epoch),
                     static_cast<uint64_t>(sample_index));
}

}  // namespace detail

// Epoch-wise training. Each epoch shuffles the sample order with a stream
// derived from (seed, epoch) and walks full batches; the remainder after the
// last full batch is skipped. Augmentation draws come from per-sample streams
// keyed by (seed, epoch, dataset index), so results do not depend on batch
// assembly. The callback, if any, runs after every completed epoch.
template <typename T, typename F>
TrainReport train(StaUnet<T>& net, const std::vector<Sample>& data, const TrainConfig& cfg,
                  F&& after_epoch) {
  cfg.validate();
  if (net.cfg.input_channels != 1)
    throw ValueError("train: model expects " + std::to_string(net.cfg.input_channels) +
                     " input channels, samples have 1");
  if (static_cast<int64_t>(data.size()) < cfg.batch_size)
    throw ValueError("train: dataset of " + std::to_string(data.size()) +
                     " samples is smaller than one batch of " + std::to_string(cfg.batch_size));
  const int64_t per_epoch = static_cast<int64_t>(data.size()) / cfg.batch_size;
  const int64_t total = per_epoch * cfg.epochs;
  SgdState<T> state = SgdState<T>::make(net);
  TrainReport report;
  report.rows.reserve(static_cast<size_t>(total));
  std::vector<int64_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
  int64_t t = 0;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(detail::shuffle_seed(cfg.seed, epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);
    for (int64_t it = 0; it < per_epoch; ++it, ++t) {
      std::vector<Sample> batch;
      batch.reserve(static_cast<size_t>(cfg.batch_size));
      for (int64_t bi = 0; bi < cfg.batch_size; ++bi) {
        const int64_t idx = order[static_cast<size_t>(it * cfg.batch_size + bi)];
        Sample s = data[static_cast<size_t>(idx)];
        Rng aug_rng(detail::augment_seed(cfg.seed, epoch, idx));
        augment_sample(s, aug_rng, cfg.aug_prob);
        batch.push_back(std::move(s));
      }
      auto [x, y] = make_batch<T>(batch);
      const double lr = [&] {
        if (cfg.schedule == Schedule::cosine) return cosine_lr(cfg.lr_initial, t, total);
        if (cfg.poly_per_epoch) return poly_lr(cfg.lr_initial, it, per_epoch);
        return poly_lr(cfg.lr_initial, t, total);
      }();
      auto probs = forward(net, x, /*training=*/true);
      auto terms = composite_loss(probs, y, static_cast<T>(cfg.w_ce), static_cast<T>(cfg.w_dice),
                                  static_cast<T>(cfg.dice_eps));
      const double loss = to_double(terms.total.item());
      if (!std::isfinite(loss))
        throw TrainDiverged("train: non-finite loss at epoch " + std::to_string(epoch) +
                            " batch " + std::to_string(it) + " (iteration " + std::to_string(t) +
                            ")");
      for_each_param(net, [](const std::string&, Tensor<T>& p, bool learnable) {
        if (learnable) p.zero_grad();
      });
      terms.total.backward();
      sgd_step(net, state, lr, cfg.momentum, cfg.weight_decay);
      report.rows.push_back({epoch, t, lr, loss, to_double(terms.ce.item()),
                             to_double(terms.dice.item())});
    }
    after_epoch(epoch);
  }
  report.iterations = t;
  return report;
}

template <typename T>
TrainReport train(StaUnet<T>& net, const std::vector<Sample>& data, const TrainConfig& cfg) {
  return train(net, data, cfg, [](int64_t) {});
}

// Eval-mode forward over a whole split, scoring argmax predictions against
// the ground truth masks.
template <typename T>
std::pair<ClassScores, ClassScores> evaluate(StaUnet<T>& net, const std::vector<Sample>& data,
                                             int64_t batch_size = 8) {
  if (data.empty()) throw ValueError("evaluate: no samples");
  LabelMap pred, gt;
  pred.n = gt.n = static_cast<int64_t>(data.size());
  pred.h = gt.h = data[0].h;
  pred.w = gt.w = data[0].w;
  for (size_t at = 0; at < data.size(); at += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(data.size(), at + static_cast<size_t>(batch_size));
    std::vector<Sample> chunk(data.begin() + static_cast<int64_t>(at),
                              data.begin() + static_cast<int64_t>(end));
    auto [x, y] = make_batch<T>(chunk);
    auto probs = forward(net, x, /*training=*/false);
    LabelMap lab = argmax_labels(probs);
    pred.ids.insert(pred.ids.end(), lab.ids.begin(), lab.ids.end());
    gt.ids.insert(gt.ids.end(), y.ids.begin(), y.ids.end());
  }
  return {dice_score(pred, gt, net.cfg.num_classes), iou_score(pred, gt, net.cfg.num_classes)};
}

}  // namespace stalab
