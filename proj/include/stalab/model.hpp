#pragma once

// U-shaped segmentation network with super token attention blocks.
// Encoder stage: two (conv3x3 + batchnorm) layers (first conv sets the
// stage width), one ReLU, skip tap, 2x2 max pool, then the stage's
// attention blocks. Bottleneck: two channel-preserving (conv+BN) + ReLU.
// Decoder stage: 2x2 stride-2 transposed conv, concat with the mirrored
// skip, conv3x3+BN+ReLU halving channels, then attention blocks. Head:
// 1x1 conv to classes + channel softmax.

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stalab/layers.hpp"
#include "stalab/rng.hpp"
#include "stalab/sta.hpp"
#include "stalab/tensor.hpp"

namespace stalab {

struct ModelConfig {
  int64_t input_channels = 3;
  int64_t num_classes = 2;
  int64_t base_channels = 64;
  int64_t input_h = 224;
  int64_t input_w = 224;
  std::array<int64_t, 4> sta_layers{1, 2, 3, 4};
  std::array<int64_t, 4> token_sizes{16, 8, 4, 2};
  std::array<int64_t, 4> heads{2, 4, 8, 16};

  int64_t stage_channels(int k) const {  // k in 1..4
    return base_channels << (k - 1);
  }

  void validate() const {
    if (input_channels < 1 || num_classes < 2 || base_channels < 1)
      throw ShapeError("model config: channels/classes must be positive");
    if (input_h < 32 || input_w < 32 || input_h % 32 != 0 || input_w % 32 != 0)
      throw ShapeError("model config: input extent " + std::to_string(input_h) + "x" +
                       std::to_string(input_w) + " must be a positive multiple of 32");
    for (int k = 1; k <= 4; ++k) {
      const int64_t ts = token_sizes[static_cast<size_t>(k - 1)];
      const int64_t hh = input_h >> k, ww = input_w >> k;  // post-pool extent
      if (ts < 1 || hh % ts != 0 || ww % ts != 0)
        throw ShapeError("model config: stage " + std::to_string(k) + " token size " +
                         std::to_string(ts) + " does not tile " + std::to_string(hh) + "x" +
                         std::to_string(ww));
      const int64_t nh = heads[static_cast<size_t>(k - 1)];
      if (nh < 1 || stage_channels(k) % nh != 0)
        throw ShapeError("model config: stage " + std::to_string(k) + " heads " +
                         std::to_string(nh) + " must divide channels " +
                         std::to_string(stage_channels(k)));
      if (sta_layers[static_cast<size_t>(k - 1)] < 0)
        throw ShapeError("model config: negative layer count");
    }
  }
};

// conv3x3 (stride 1, pad 1) followed by batch norm.
template <typename T>
struct ConvBn {
  Tensor<T> w, b;          // convolution
  Tensor<T> gamma, beta;   // learnable affine
  Tensor<T> rmean, rvar;   // running statistics (state, not learnable)
};

template <typename T>
struct EncoderStage {
  ConvBn<T> block1, block2;
  std::vector<StaBlockParams<T>> sta;
};

template <typename T>
struct DecoderStage {
  Tensor<T> up_w, up_b;  // transposed conv 2x2 stride 2
  ConvBn<T> fuse;        // halves channels after the skip concat
  std::vector<StaBlockParams<T>> sta;
};

template <typename T>
struct StaUnet {
  ModelConfig cfg;
  std::array<EncoderStage<T>, 4> enc;
  ConvBn<T> bott1, bott2;
  std::array<DecoderStage<T>, 4> dec;  // dec[k-1] pairs with enc[k-1]; applied 4..1
  Tensor<T> head_w, head_b;
  std::array<TokenGrid, 4> enc_grid, dec_grid;
};

// Visits every tensor of the model in a fixed order; `learnable` is false
// for batch-norm running statistics. Checkpoint layout and the optimizer
// both follow this order.
template <typename T, typename F>
void for_each_param(StaUnet<T>& net, F visit) {
  auto conv_bn = [&](const std::string& prefix, ConvBn<T>& cb) {
    visit(prefix + ".conv.w", cb.w, true);
    visit(prefix + ".conv.b", cb.b, true);
    visit(prefix + ".bn.gamma", cb.gamma, true);
    visit(prefix + ".bn.beta", cb.beta, true);
    visit(prefix + ".bn.rmean", cb.rmean, false);
    visit(prefix + ".bn.rvar", cb.rvar, false);
  };
  auto sta_params = [&](const std::string& prefix, StaBlockParams<T>& p) {
    visit(prefix + ".cpe.w", p.cpe_w, true);
    visit(prefix + ".cpe.b", p.cpe_b, true);
    visit(prefix + ".ln.gamma", p.ln_gamma, true);
    visit(prefix + ".ln.beta", p.ln_beta, true);
    visit(prefix + ".wq", p.wq, true);
    visit(prefix + ".wk", p.wk, true);
    visit(prefix + ".wv", p.wv, true);
  };
  for (int k = 1; k <= 4; ++k) {
    auto& st = net.enc[static_cast<size_t>(k - 1)];
    const std::string pre = "enc" + std::to_string(k);
    conv_bn(pre + ".block1", st.block1);
    conv_bn(pre + ".block2", st.block2);
    for (size_t j = 0; j < st.sta.size(); ++j)
      sta_params(pre + ".sta" + std::to_string(j + 1), st.sta[j]);
  }
  conv_bn("bott.block1", net.bott1);
  conv_bn("bott.block2", net.bott2);
  for (int k = 4; k >= 1; --k) {
    auto& st = net.dec[static_cast<size_t>(k - 1)];
    const std::string pre = "dec" + std::to_string(k);
    visit(pre + ".up.w", st.up_w, true);
    visit(pre + ".up.b", st.up_b, true);
    conv_bn(pre + ".fuse", st.fuse);
    for (size_t j = 0; j < st.sta.size(); ++j)
      sta_params(pre + ".sta" + std::to_string(j + 1), st.sta[j]);
  }
  visit("head.w", net.head_w, true);
  visit("head.b", net.head_b, true);
}

// Learnable parameter count as a closed formula over the configuration:
//   conv_bn(cin,cout)   = 9*cin*cout + cout + 2*cout
//   sta(C)              = 9C + C (CPE) + 2C (LN) + 3C^2 (projections)
//   encoder stage k     = conv_bn(cin_k, c_k) + conv_bn(c_k, c_k) + L_k*sta(c_k)
//   bottleneck          = 2*conv_bn(c_4, c_4)
//   decoder stage k     = 4*cin_t*c_k + c_k (up) + conv_bn(2c_k, c_k) + L_k*sta(c_k)
//                         with cin_t = c_4 for k=4 else c_{k+1}
//   head                = c_1*classes + classes
template <typename T = float>
int64_t param_count(const ModelConfig& cfg) {
  auto conv_bn = [](int64_t cin, int64_t cout) { return 9 * cin * cout + cout + 2 * cout; };
  auto sta = [](int64_t c) { return 9 * c + c + 2 * c + 3 * c * c; };
  int64_t total = 0;
  for (int k = 1; k <= 4; ++k) {
    const int64_t ck = cfg.stage_channels(k);
    const int64_t cin = k == 1 ? cfg.input_channels : cfg.stage_channels(k - 1);
    total += conv_bn(cin, ck) + conv_bn(ck, ck) +
             cfg.sta_layers[static_cast<size_t>(k - 1)] * sta(ck);
  }
  const int64_t c4 = cfg.stage_channels(4);
  total += 2 * conv_bn(c4, c4);
  for (int k = 4; k >= 1; --k) {
    const int64_t ck = cfg.stage_channels(k);
    const int64_t cin_t = (k == 4) ? c4 : cfg.stage_channels(k + 1);
    total += 4 * cin_t * ck + ck + conv_bn(2 * ck, ck) +
             cfg.sta_layers[static_cast<size_t>(k - 1)] * sta(ck);
  }
  total += cfg.stage_channels(1) * cfg.num_classes + cfg.num_classes;
  return total;
}

namespace detail {

// fan-in-scaled uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]
template <typename T>
Tensor<T> init_uniform(const Shape& shape, int64_t fan_in, Rng& rng) {
  auto t = Tensor<T>::zeros(shape, true);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data()) v = T(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
ConvBn<T> init_conv_bn(int64_t cin, int64_t cout, Rng& rng) {
  ConvBn<T> cb;
  const int64_t fan = cin * 9;
  cb.w = init_uniform<T>({cout, cin, 3, 3}, fan, rng);
  cb.b = init_uniform<T>({cout}, fan, rng);
  cb.gamma = Tensor<T>::ones({cout}, true);
  cb.beta = Tensor<T>::zeros({cout}, true);
  cb.rmean = Tensor<T>::zeros({cout});
  cb.rvar = Tensor<T>::ones({cout});
  return cb;
}

template <typename T>
StaBlockParams<T> init_sta_params(int64_t c, int64_t heads, Rng& rng) {
  StaBlockParams<T> p;
  p.cpe_w = init_uniform<T>({c, 1, 3, 3}, 9, rng);
  p.cpe_b = init_uniform<T>({c}, 9, rng);
  p.ln_gamma = Tensor<T>::ones({c}, true);
  p.ln_beta = Tensor<T>::zeros({c}, true);
  p.wq = init_uniform<T>({c, c}, c, rng);
  p.wk = init_uniform<T>({c, c}, c, rng);
  p.wv = init_uniform<T>({c, c}, c, rng);
  p.heads = heads;
  return p;
}

}  // namespace detail

template <typename T>
StaUnet<T> build_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  StaUnet<T> net;
  net.cfg = cfg;
  Rng rng(derive_seed(seed, 0x6d6f64656cull));  // "model" stream
  for (int k = 1; k <= 4; ++k) {
    const size_t i = static_cast<size_t>(k - 1);
    const int64_t ck = cfg.stage_channels(k);
    const int64_t cin = k == 1 ? cfg.input_channels : cfg.stage_channels(k - 1);
    net.enc[i].block1 = detail::init_conv_bn<T>(cin, ck, rng);
    net.enc[i].block2 = detail::init_conv_bn<T>(ck, ck, rng);
    for (int64_t j = 0; j < cfg.sta_layers[i]; ++j)
      net.enc[i].sta.push_back(detail::init_sta_params<T>(ck, cfg.heads[i], rng));
    net.enc_grid[i] =
        make_token_grid(cfg.input_h >> k, cfg.input_w >> k, cfg.token_sizes[i], cfg.token_sizes[i]);
    net.dec_grid[i] = make_token_grid(cfg.input_h >> (k - 1), cfg.input_w >> (k - 1),
                                      cfg.token_sizes[i], cfg.token_sizes[i]);
  }
  const int64_t c4 = cfg.stage_channels(4);
  net.bott1 = detail::init_conv_bn<T>(c4, c4, rng);
  net.bott2 = detail::init_conv_bn<T>(c4, c4, rng);
  for (int k = 4; k >= 1; --k) {
    const size_t i = static_cast<size_t>(k - 1);
    const int64_t ck = cfg.stage_channels(k);
    const int64_t cin_t = (k == 4) ? c4 : cfg.stage_channels(k + 1);
    net.dec[i].up_w = detail::init_uniform<T>({cin_t, ck, 2, 2}, cin_t * 4, rng);
    net.dec[i].up_b = detail::init_uniform<T>({ck}, cin_t * 4, rng);
    net.dec[i].fuse = detail::init_conv_bn<T>(2 * ck, ck, rng);
    for (int64_t j = 0; j < cfg.sta_layers[i]; ++j)
      net.dec[i].sta.push_back(detail::init_sta_params<T>(ck, cfg.heads[i], rng));
  }
  net.head_w = detail::init_uniform<T>({cfg.num_classes, cfg.stage_channels(1), 1, 1},
                                       cfg.stage_channels(1), rng);
  net.head_b = detail::init_uniform<T>({cfg.num_classes}, cfg.stage_channels(1), rng);
  return net;
}

// Activation taps recorded during a forward pass, execution order
// (shallow to deep): every attention block plus the bottleneck output.
template <typename T>
struct ForwardTrace {
  std::vector<std::pair<std::string, Tensor<T>>> taps;
};

namespace detail {

template <typename T>
Tensor<T> apply_conv_bn(const Tensor<T>& x, ConvBn<T>& cb, bool training) {
  Tensor<T> y = conv2d(x, cb.w, cb.b, 1, 1);
  return batchnorm2d(y, cb.gamma, cb.beta, cb.rmean, cb.rvar, training);
}

}  // namespace detail

// Full forward pass to per-pixel class probabilities [N,K,H,W]. Mutates
// batch-norm running stats when `training`. Shape errors from inside a
// stage are rethrown with the stage attached.
template <typename T>
Tensor<T> forward(StaUnet<T>& net, const Tensor<T>& x, bool training,
                  ForwardTrace<T>* trace = nullptr) {
  const ModelConfig& cfg = net.cfg;
  if (x.rank() != 4 || x.dim(1) != cfg.input_channels || x.dim(2) != cfg.input_h ||
      x.dim(3) != cfg.input_w)
    throw ShapeError("forward: input " + shape_str(x.shape()) + " vs configured [N," +
                     std::to_string(cfg.input_channels) + "," + std::to_string(cfg.input_h) + "," +
                     std::to_string(cfg.input_w) + "]");
  auto tap = [&](const std::string& name, const Tensor<T>& t) {
    if (trace) trace->taps.emplace_back(name, t);
  };

  Tensor<T> cur = x;
  std::array<Tensor<T>, 4> skips;
  for (int k = 1; k <= 4; ++k) {
    const size_t i = static_cast<size_t>(k - 1);
    try {
      auto& st = net.enc[i];
      cur = detail::apply_conv_bn(cur, st.block1, training);
      cur = detail::apply_conv_bn(cur, st.block2, training);
      cur = relu(cur);
      skips[i] = cur;
      cur = maxpool2d(cur, 2, 2);
      for (size_t j = 0; j < st.sta.size(); ++j) {
        cur = sta_block(cur, st.sta[j], net.enc_grid[i]);
        tap("enc" + std::to_string(k) + ".sta" + std::to_string(j + 1), cur);
      }
    } catch (const ShapeError& e) {
      throw ShapeError("encoder stage " + std::to_string(k) + ": " + e.what());
    }
  }

  try {
    cur = detail::apply_conv_bn(cur, net.bott1, training);
    cur = detail::apply_conv_bn(cur, net.bott2, training);
    cur = relu(cur);
    tap("bottleneck", cur);
  } catch (const ShapeError& e) {
    throw ShapeError(std::string("bottleneck: ") + e.what());
  }

  for (int k = 4; k >= 1; --k) {
    const size_t i = static_cast<size_t>(k - 1);
    try {
      auto& st = net.dec[i];
      Tensor<T> up = transposed_conv2d(cur, st.up_w, st.up_b, 2);
      const Tensor<T>& skip = skips[i];
      if (up.dim(2) != skip.dim(2) || up.dim(3) != skip.dim(3))
        throw ShapeError("upsample target " + shape_str(up.shape()) + " vs skip " +
                         shape_str(skip.shape()));
      cur = concat<T>({up, skip}, 1);
      cur = relu(detail::apply_conv_bn(cur, st.fuse, training));
      for (size_t j = 0; j < st.sta.size(); ++j) {
        cur = sta_block(cur, st.sta[j], net.dec_grid[i]);
        tap("dec" + std::to_string(k) + ".sta" + std::to_string(j + 1), cur);
      }
    } catch (const ShapeError& e) {
      throw ShapeError("decoder stage " + std::to_string(k) + ": " + e.what());
    }
  }

  cur = conv2d(cur, net.head_w, net.head_b, 1, 0);
  return softmax(cur, 1);
}

}  // namespace stalab
