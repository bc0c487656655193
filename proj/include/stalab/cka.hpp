#pragma once

// Representation-similarity analysis: RBF Gram matrices, centered kernel
// alignment (CKA), block-by-block similarity matrices, and activation capture
// from a model forward pass.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "stalab/model.hpp"
#include "stalab/rng.hpp"
#include "stalab/tensor.hpp"

namespace stalab {

// One captured block output, flattened to a samples x features matrix.
struct BlockActivations {
  std::string name;
  int64_t samples = 0, features = 0;
  std::vector<double> values;  // row-major [samples][features]
};

// Block outputs ordered shallow to deep; every block shares the sample count.
struct ActivationDump {
  std::vector<BlockActivations> blocks;

  void check() const {
    if (blocks.empty()) throw ValueError("activation dump: no blocks");
    for (const auto& b : blocks) {
      if (b.samples < 2)
        throw ValueError("activation dump: block " + b.name + " has " +
                         std::to_string(b.samples) + " samples, need at least 2");
      if (static_cast<int64_t>(b.values.size()) != b.samples * b.features)
        throw ShapeError("activation dump: block " + b.name + " holds " +
                         std::to_string(b.values.size()) + " values for " +
                         std::to_string(b.samples) + "x" + std::to_string(b.features));
      if (b.samples != blocks[0].samples)
        throw ShapeError("activation dump: block " + b.name + " has " +
                         std::to_string(b.samples) + " samples, block " + blocks[0].name +
                         " has " + std::to_string(blocks[0].samples));
    }
  }
};

// Gram matrix K_ij = exp(-||x_i - x_j||^2), unit bandwidth. With
// median_bandwidth the squared distances are divided by their median first,
// which keeps large-magnitude features from underflowing every off-diagonal
// entry to zero.
inline std::vector<double> rbf_gram(const std::vector<double>& x, int64_t n, int64_t p,
                                    bool median_bandwidth = false) {
  if (n < 2) throw ValueError("rbf_gram: need at least 2 samples, got " + std::to_string(n));
  if (p < 1 || static_cast<int64_t>(x.size()) != n * p)
    throw ShapeError("rbf_gram: " + std::to_string(x.size()) + " values for " +
                     std::to_string(n) + "x" + std::to_string(p));
  std::vector<double> d2(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      const double* a = x.data() + i * p;
      const double* b = x.data() + j * p;
      double acc = 0;
      for (int64_t f = 0; f < p; ++f) {
        const double d = a[f] - b[f];
        acc += d * d;
      }
      d2[static_cast<size_t>(i * n + j)] = acc;
      d2[static_cast<size_t>(j * n + i)] = acc;
    }
  double bw = 1.0;
  if (median_bandwidth) {
    std::vector<double> upper;
    upper.reserve(static_cast<size_t>(n * (n - 1) / 2));
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = i + 1; j < n; ++j) upper.push_back(d2[static_cast<size_t>(i * n + j)]);
    const size_t mid = (upper.size() - 1) / 2;
    std::nth_element(upper.begin(), upper.begin() + static_cast<int64_t>(mid), upper.end());
    bw = upper[mid] > 0 ? upper[mid] : 1.0;
  }
  std::vector<double> k(static_cast<size_t>(n * n));
  for (size_t i = 0; i < k.size(); ++i) k[i] = std::exp(-d2[i] / bw);
  return k;
}

namespace detail {

// Double centering in place: g <- HgH with H = I - (1/n) 1 1^T.
inline void center_gram(std::vector<double>& g, int64_t n) {
  std::vector<double> rowmean(static_cast<size_t>(n), 0.0);
  double grand = 0;
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0;
    for (int64_t j = 0; j < n; ++j) acc += g[static_cast<size_t>(i * n + j)];
    rowmean[static_cast<size_t>(i)] = acc / static_cast<double>(n);
    grand += acc;
  }
  grand /= static_cast<double>(n * n);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j)
      g[static_cast<size_t>(i * n + j)] +=
          grand - rowmean[static_cast<size_t>(i)] - rowmean[static_cast<size_t>(j)];
}

}  // namespace detail

// tr(KHLH) / sqrt(tr(KHKH) tr(LHLH)) on precomputed Gram matrices. A constant
// representation makes a denominator factor zero; that degenerate case scores
// 0 and warns rather than dividing by zero.
inline double cka_from_grams(std::vector<double> k, std::vector<double> l, int64_t n) {
  if (static_cast<int64_t>(k.size()) != n * n || static_cast<int64_t>(l.size()) != n * n)
    throw ShapeError("cka: gram matrices must both be " + std::to_string(n) + "x" +
                     std::to_string(n));
  detail::center_gram(k, n);
  detail::center_gram(l, n);
  double kl = 0, kk = 0, ll = 0;
  for (size_t i = 0; i < k.size(); ++i) {
    kl += k[i] * l[i];
    kk += k[i] * k[i];
    ll += l[i] * l[i];
  }
  const double denom = std::sqrt(kk * ll);
  if (denom == 0) {
    std::fprintf(stderr, "warning: cka on a constant representation, returning 0\n");
    return 0.0;
  }
  return kl / denom;
}

// CKA between two feature matrices over the same samples.
inline double cka(const std::vector<double>& x, const std::vector<double>& y, int64_t n,
                  int64_t px, int64_t py, bool median_bandwidth = false) {
  return cka_from_grams(rbf_gram(x, n, px, median_bandwidth),
                        rbf_gram(y, n, py, median_bandwidth), n);
}

// Pairwise block similarities; raw entries keep cka's scale, min-max
// normalization rescales to [0,1] for the heatmap rendering.
struct CkaMatrix {
  std::vector<std::string> names;
  int64_t size = 0;
  std::vector<double> values;  // row-major [size][size]
  bool normalized = false;

  double at(int64_t a, int64_t b) const { return values[static_cast<size_t>(a * size + b)]; }
};

inline CkaMatrix block_similarity(const ActivationDump& dump, bool median_bandwidth = false) {
  dump.check();
  const int64_t b = static_cast<int64_t>(dump.blocks.size());
  if (b < 2) throw ValueError("block_similarity: need at least 2 blocks");
  const int64_t n = dump.blocks[0].samples;
  std::vector<std::vector<double>> grams;
  grams.reserve(static_cast<size_t>(b));
  for (const auto& blk : dump.blocks)
    grams.push_back(rbf_gram(blk.values, n, blk.features, median_bandwidth));
  CkaMatrix m;
  m.size = b;
  m.values.assign(static_cast<size_t>(b * b), 0.0);
  for (const auto& blk : dump.blocks) m.names.push_back(blk.name);
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = i; j < b; ++j) {
      const double v =
          cka_from_grams(grams[static_cast<size_t>(i)], grams[static_cast<size_t>(j)], n);
      m.values[static_cast<size_t>(i * b + j)] = v;
      m.values[static_cast<size_t>(j * b + i)] = v;
    }
  return m;
}

inline void min_max_normalize(CkaMatrix& m) {
  if (m.values.empty()) throw ValueError("min_max_normalize: empty matrix");
  const auto [lo_it, hi_it] = std::minmax_element(m.values.begin(), m.values.end());
  const double lo = *lo_it, range = *hi_it - *lo_it;
  for (double& v : m.values) v = range == 0 ? 0.0 : (v - lo) / range;
  m.normalized = true;
}

// Mean off-diagonal similarity within the shallow half of the blocks and
// within the deep half; the gap quantifies how much more redundant the
// shallow blocks are.
struct RedundancySummary {
  double shallow = 0, deep = 0;
};

inline RedundancySummary shallow_redundancy(const CkaMatrix& m) {
  if (m.normalized) throw ValueError("shallow_redundancy: wants the raw matrix");
  if (m.size < 4)
    throw ValueError("shallow_redundancy: need at least 4 blocks, got " +
                     std::to_string(m.size));
  auto off_diag_mean = [&](int64_t lo, int64_t hi) {
    double acc = 0;
    int64_t cnt = 0;
    for (int64_t i = lo; i < hi; ++i)
      for (int64_t j = lo; j < hi; ++j)
        if (i != j) {
          acc += m.at(i, j);
          ++cnt;
        }
    return acc / static_cast<double>(cnt);
  };
  const int64_t half = m.size / 2;
  return {off_diag_mean(0, half), off_diag_mean(half, m.size)};
}

struct CaptureOptions {
  int64_t max_features = 0;  // 0 keeps every feature
  uint64_t seed = 0;         // stream for the feature subsample
};

// Runs an eval-mode forward pass and flattens the selected block outputs,
// one matrix per selector entry, rows indexed by batch sample. Oversized
// feature counts are cut down by a seeded sample without replacement so dumps
// stay reproducible.
template <typename T>
ActivationDump capture_activations(StaUnet<T>& net, const Tensor<T>& x,
                                   const std::vector<std::string>& selector,
                                   CaptureOptions opt = {}) {
  if (selector.empty()) throw ValueError("capture_activations: empty block selection");
  ForwardTrace<T> trace;
  forward(net, x, /*training=*/false, &trace);
  ActivationDump dump;
  for (size_t si = 0; si < selector.size(); ++si) {
    const Tensor<T>* tap = nullptr;
    for (const auto& [name, t] : trace.taps)
      if (name == selector[si]) tap = &t;
    if (!tap) throw ValueError("capture_activations: no block named " + selector[si]);
    const int64_t n = tap->dim(0);
    const int64_t p = tap->numel() / n;
    BlockActivations blk;
    blk.name = selector[si];
    blk.samples = n;
    if (opt.max_features > 0 && p > opt.max_features) {
      // floyd-style sample, then sorted so feature order is stable
      std::vector<int64_t> keep;
      keep.reserve(static_cast<size_t>(opt.max_features));
      Rng rng(derive_seed(opt.seed, 0x666561747572ull, si));
      std::vector<int64_t> pool(static_cast<size_t>(p));
      for (int64_t f = 0; f < p; ++f) pool[static_cast<size_t>(f)] = f;
      for (int64_t f = 0; f < opt.max_features; ++f) {
        const uint64_t pick = f + static_cast<int64_t>(rng.next_below(
                                      static_cast<uint64_t>(p - f)));
        std::swap(pool[static_cast<size_t>(f)], pool[static_cast<size_t>(pick)]);
        keep.push_back(pool[static_cast<size_t>(f)]);
      }
      std::sort(keep.begin(), keep.end());
      blk.features = opt.max_features;
      blk.values.reserve(static_cast<size_t>(n * opt.max_features));
      for (int64_t s = 0; s < n; ++s)
        for (int64_t f : keep)
          blk.values.push_back(to_double(tap->data()[static_cast<size_t>(s * p + f)]));
    } else {
      blk.features = p;
      blk.values.reserve(static_cast<size_t>(n * p));
      for (int64_t i = 0; i < n * p; ++i)
        blk.values.push_back(to_double(tap->data()[static_cast<size_t>(i)]));
    }
    dump.blocks.push_back(std::move(blk));
  }
  dump.check();
  return dump;
}

}  // namespace stalab
