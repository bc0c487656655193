#pragma once

// Synthetic segmentation data: grayscale scenes of ellipses and rectangles,
// one shape per foreground class, painted over a noisy background with exact
// masks. Pixel values are quantized to 8 bits at generation time so a trip
// through PGM files reproduces the in-memory samples bit for bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stalab/rng.hpp"
#include "stalab/tensor.hpp"

namespace stalab {

// One grayscale image with its per-pixel class mask. Image values live in
// [0,1] on a 1/255 grid.
struct Sample {
  int64_t h = 0, w = 0;
  std::vector<float> image;   // row-major [h][w]
  std::vector<int32_t> mask;  // row-major [h][w]
};

namespace detail {

inline uint8_t quantize_u8(double v) {
  const double s = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<uint8_t>(s);
}

}  // namespace detail

// Draws one scene. Foreground classes 1..K-1 each paint a single random
// ellipse or axis-aligned rectangle, later classes over earlier ones, with a
// class-specific intensity band; class 0 is the background.
inline Sample gen_sample(int64_t extent, int64_t num_classes, Rng& rng) {
  if (extent < 8) throw ValueError("gen_sample: extent " + std::to_string(extent) + " < 8");
  if (num_classes < 2)
    throw ValueError("gen_sample: need at least 2 classes, got " + std::to_string(num_classes));
  Sample s;
  s.h = extent;
  s.w = extent;
  const size_t n = static_cast<size_t>(extent * extent);
  std::vector<double> base(n, 0.15);
  s.mask.assign(n, 0);
  for (int64_t c = 1; c < num_classes; ++c) {
    const bool ellipse = rng.next_below(2) == 0;
    const double cx = rng.uniform(0.2, 0.8) * static_cast<double>(extent);
    const double cy = rng.uniform(0.2, 0.8) * static_cast<double>(extent);
    const double rx = rng.uniform(0.12, 0.30) * static_cast<double>(extent);
    const double ry = rng.uniform(0.12, 0.30) * static_cast<double>(extent);
    const double shade =
        0.35 + 0.55 * static_cast<double>(c) / static_cast<double>(num_classes - 1) +
        rng.uniform(-0.04, 0.04);
    for (int64_t r = 0; r < extent; ++r)
      for (int64_t q = 0; q < extent; ++q) {
        const double dx = (static_cast<double>(q) + 0.5 - cx) / rx;
        const double dy = (static_cast<double>(r) + 0.5 - cy) / ry;
        const bool inside =
            ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (inside) {
          base[static_cast<size_t>(r * extent + q)] = shade;
          s.mask[static_cast<size_t>(r * extent + q)] = static_cast<int32_t>(c);
        }
      }
  }
  s.image.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const uint8_t u = detail::quantize_u8(base[i] + rng.uniform(-0.05, 0.05));
    s.image[i] = static_cast<float>(u) / 255.0f;
  }
  return s;
}

// Deterministic collection: sample i uses the stream (seed, split_tag, i), so
// splits and individual samples are reproducible independently of count.
inline std::vector<Sample> gen_dataset(int64_t count, int64_t extent, int64_t num_classes,
                                       uint64_t seed, uint64_t split_tag) {
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, split_tag, static_cast<uint64_t>(i)));
    out.push_back(gen_sample(extent, num_classes, rng));
  }
  return out;
}

}  // namespace stalab
