#pragma once

// Analytic operation counts per layer and per model. Convention: one
// multiply-accumulate = 2 FLOPs; normalization, softmax, divisions, and
// comparisons are excluded. The same convention governs the instrumented
// multiply counter the tests compare against, so analytic and measured
// counts must match exactly.

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "stalab/model.hpp"
#include "stalab/sta.hpp"
#include "stalab/tensor.hpp"

namespace stalab {

inline constexpr const char* kFlopsConvention =
    "mac=2flops; norm, softmax, divisions and comparisons excluded";

// 2 * K^2 * (Cin/groups) * Cout * Hout * Wout. The convolution always walks
// the full K^2 window over a zero-padded input, so padding does not reduce
// the count.
inline int64_t flops_conv2d(int64_t k, int64_t cin, int64_t cout, int64_t hout, int64_t wout,
                            int64_t groups = 1) {
  if (k < 1 || cin < 1 || cout < 1 || hout < 1 || wout < 1 || groups < 1)
    throw ValueError("flops_conv2d: non-positive dimension");
  if (cin % groups != 0)
    throw ValueError("flops_conv2d: groups " + std::to_string(groups) + " do not divide Cin " +
                     std::to_string(cin));
  return 2 * k * k * (cin / groups) * cout * hout * wout;
}

// Transposed convolution scatters every input pixel through the full kernel:
// 2 * K^2 * Cin * Cout * Hin * Win.
inline int64_t flops_transposed_conv2d(int64_t k, int64_t cin, int64_t cout, int64_t hin,
                                       int64_t win) {
  if (k < 1 || cin < 1 || cout < 1 || hin < 1 || win < 1)
    throw ValueError("flops_transposed_conv2d: non-positive dimension");
  return 2 * k * k * cin * cout * hin * win;
}

// One super-token attention block on an HxW map of C channels, per sample.
// Association, super-token update, and upsampling each cost one multiply per
// channel per (token, super token) pair; border cells see fewer than the
// interior's nine neighbors, and the exact pair count is what the kernels
// execute. Attention adds 2*m^2*C for the score and value products plus
// 3*m*C^2 for the Q/K/V projections; the positional depthwise 3x3 adds
// 9*C*H*W. Head count only partitions channels, it does not change the count.
inline int64_t flops_sta(int64_t h, int64_t w, int64_t token_h, int64_t token_w, int64_t c) {
  const TokenGrid g = make_token_grid(h, w, token_h, token_w);
  const int64_t pairs = grid_pair_count(g);
  const int64_t macs = 3 * pairs * c        // associate + update + upsample
                       + 2 * g.m * g.m * c  // attention scores and values
                       + 3 * g.m * c * c    // q/k/v projections
                       + 9 * c * h * w;     // positional depthwise conv
  return 2 * macs;
}

struct FlopsRow {
  std::string name, kind;
  int64_t flops = 0;
  int64_t params = 0;
};

struct FlopsReport {
  std::vector<FlopsRow> rows;
  int64_t total_flops = 0;
  int64_t total_params = 0;
  std::string convention = kFlopsConvention;
};

// Per-layer audit of one forward pass at batch size 1.
inline FlopsReport flops_model(const ModelConfig& cfg) {
  cfg.validate();
  FlopsReport rep;
  auto row = [&](const std::string& name, const std::string& kind, int64_t flops,
                 int64_t params) {
    rep.rows.push_back({name, kind, flops, params});
    rep.total_flops += flops;
    rep.total_params += params;
  };
  auto conv_bn = [&](const std::string& prefix, int64_t cin, int64_t cout, int64_t h,
                     int64_t w) {
    row(prefix + ".conv", "conv2d", flops_conv2d(3, cin, cout, h, w), 9 * cin * cout + cout);
    row(prefix + ".bn", "batchnorm", 0, 2 * cout);
  };
  auto sta_rows = [&](const std::string& prefix, int64_t layers, int64_t h, int64_t w,
                      int64_t token, int64_t c) {
    for (int64_t j = 1; j <= layers; ++j)
      row(prefix + ".sta" + std::to_string(j), "sta", flops_sta(h, w, token, token, c),
          9 * c + c + 2 * c + 3 * c * c);
  };

  for (int k = 1; k <= 4; ++k) {
    const int64_t cin = k == 1 ? cfg.input_channels : cfg.stage_channels(k - 1);
    const int64_t c = cfg.stage_channels(k);
    const std::string pre = "enc" + std::to_string(k);
    conv_bn(pre + ".block1", cin, c, cfg.input_h >> (k - 1), cfg.input_w >> (k - 1));
    conv_bn(pre + ".block2", c, c, cfg.input_h >> (k - 1), cfg.input_w >> (k - 1));
    sta_rows(pre, cfg.sta_layers[static_cast<size_t>(k - 1)], cfg.input_h >> k,
             cfg.input_w >> k, cfg.token_sizes[static_cast<size_t>(k - 1)], c);
  }
  const int64_t c4 = cfg.stage_channels(4);
  conv_bn("bott.block1", c4, c4, cfg.input_h >> 4, cfg.input_w >> 4);
  conv_bn("bott.block2", c4, c4, cfg.input_h >> 4, cfg.input_w >> 4);
  for (int k = 4; k >= 1; --k) {
    const int64_t c = cfg.stage_channels(k);
    const int64_t cin_t = k == 4 ? c4 : cfg.stage_channels(k + 1);
    const std::string pre = "dec" + std::to_string(k);
    row(pre + ".up", "transposed_conv2d",
        flops_transposed_conv2d(2, cin_t, c, cfg.input_h >> k, cfg.input_w >> k),
        4 * cin_t * c + c);
    conv_bn(pre + ".fuse", 2 * c, c, cfg.input_h >> (k - 1), cfg.input_w >> (k - 1));
    sta_rows(pre, cfg.sta_layers[static_cast<size_t>(k - 1)], cfg.input_h >> (k - 1),
             cfg.input_w >> (k - 1), cfg.token_sizes[static_cast<size_t>(k - 1)], c);
  }
  row("head", "conv2d",
      flops_conv2d(1, cfg.base_channels, cfg.num_classes, cfg.input_h, cfg.input_w),
      cfg.base_channels * cfg.num_classes + cfg.num_classes);
  return rep;
}

inline std::string flops_csv(const FlopsReport& rep) {
  std::ostringstream os;
  os << "name,kind,flops,params\n";
  for (const auto& r : rep.rows)
    os << r.name << ',' << r.kind << ',' << r.flops << ',' << r.params << '\n';
  os << "total,," << rep.total_flops << ',' << rep.total_params << '\n';
  return os.str();
}

inline std::string flops_table(const FlopsReport& rep) {
  size_t name_w = 5, kind_w = 4;
  for (const auto& r : rep.rows) {
    name_w = std::max(name_w, r.name.size());
    kind_w = std::max(kind_w, r.kind.size());
  }
  std::ostringstream os;
  auto line = [&](const std::string& name, const std::string& kind, const std::string& flops,
                  const std::string& params) {
    os << name << std::string(name_w + 2 - name.size(), ' ') << kind
       << std::string(kind_w + 2 - kind.size(), ' ') << flops << "  " << params << '\n';
  };
  line("layer", "kind", "flops", "params");
  for (const auto& r : rep.rows)
    line(r.name, r.kind, std::to_string(r.flops), std::to_string(r.params));
  line("total", "", std::to_string(rep.total_flops), std::to_string(rep.total_params));
  os << "convention: " << rep.convention << '\n';
  return os.str();
}

}  // namespace stalab
