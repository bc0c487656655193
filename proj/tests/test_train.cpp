#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "stalab/data.hpp"
#include "stalab/loss.hpp"
#include "stalab/metrics.hpp"
#include "stalab/model.hpp"
#include "stalab/rng.hpp"
#include "stalab/tensor.hpp"
#include "stalab/train.hpp"

#include "support/gradcheck.hpp"

using stalab::LabelMap;
using stalab::ModelConfig;
using stalab::Rng;
using stalab::Sample;
using stalab::Tensor;
using stalab::TrainConfig;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.input_channels = 1;
  cfg.num_classes = 3;
  cfg.base_channels = 8;
  cfg.input_h = 32;
  cfg.input_w = 32;
  cfg.sta_layers = {1, 1, 1, 1};
  cfg.token_sizes = {4, 2, 1, 1};
  cfg.heads = {2, 4, 8, 16};
  return cfg;
}

LabelMap labels_from(int64_t n, int64_t h, int64_t w, std::vector<int32_t> ids) {
  LabelMap m;
  m.n = n;
  m.h = h;
  m.w = w;
  m.ids = std::move(ids);
  return m;
}

// Random probabilities through a softmax so rows sum to one.
Tensor<double> random_probs(int64_t n, int64_t k, int64_t h, int64_t w, uint64_t seed) {
  Rng rng(seed);
  auto raw = Tensor<double>::zeros({n, k, h, w});
  for (auto& v : raw.data()) v = rng.uniform(-2.0, 2.0);
  return stalab::softmax(raw, 1);
}

LabelMap random_labels(int64_t n, int64_t h, int64_t w, int64_t k, uint64_t seed) {
  Rng rng(seed);
  LabelMap m;
  m.n = n;
  m.h = h;
  m.w = w;
  m.ids.resize(static_cast<size_t>(n * h * w));
  for (auto& v : m.ids) v = static_cast<int32_t>(rng.next_below(static_cast<uint64_t>(k)));
  return m;
}

}  // namespace

TEST_CASE("poly schedule matches the closed form") {
  const double lr0 = 1e-2;
  const int64_t n = 1000;
  for (int64_t t : {int64_t(0), n / 4, n / 2, 3 * n / 4, n}) {
    const double want =
        t == n ? 0.0 : lr0 * std::exp(0.9 * std::log(1.0 - static_cast<double>(t) / n));
    REQUIRE(stalab::poly_lr(lr0, t, n) == Catch::Approx(want).margin(1e-12));
  }
  REQUIRE(stalab::poly_lr(lr0, 0, n) == lr0);
  REQUIRE(stalab::poly_lr(lr0, n, n) == 0.0);
  double prev = lr0 + 1;
  for (int64_t t = 0; t <= n; t += 50) {
    const double lr = stalab::poly_lr(lr0, t, n);
    REQUIRE(lr < prev);
    prev = lr;
  }
  REQUIRE_THROWS_AS(stalab::poly_lr(lr0, n + 1, n), stalab::ValueError);
  REQUIRE_THROWS_AS(stalab::poly_lr(lr0, -1, n), stalab::ValueError);
  REQUIRE_THROWS_AS(stalab::poly_lr(lr0, 0, 0), stalab::ValueError);
}

TEST_CASE("cosine schedule hits both endpoints exactly") {
  const double lr0 = 3e-3;
  const int64_t n = 7;
  REQUIRE(stalab::cosine_lr(lr0, 0, n) == lr0);
  REQUIRE(stalab::cosine_lr(lr0, n, n) == 0.0);
  REQUIRE(stalab::cosine_lr(lr0, 0, n, 1e-4) == lr0);
  REQUIRE(stalab::cosine_lr(lr0, n, n, 1e-4) == 1e-4);
  const double mid = stalab::cosine_lr(lr0, n, 2 * n);
  REQUIRE(mid == Catch::Approx(0.5 * lr0).margin(1e-12));
  double prev = lr0 + 1;
  for (int64_t t = 0; t <= 100; ++t) {
    const double lr = stalab::cosine_lr(lr0, t, 100);
    REQUIRE(lr < prev);
    prev = lr;
  }
  REQUIRE_THROWS_AS(stalab::cosine_lr(lr0, 8, 7), stalab::ValueError);
}

TEST_CASE("cross entropy matches hand-computed values") {
  SECTION("uniform probabilities over nine classes") {
    const int64_t k = 9;
    auto probs = Tensor<double>::full({1, k, 2, 2}, 1.0 / 9.0);
    auto tgt = labels_from(1, 2, 2, {0, 3, 8, 5});
    auto ce = stalab::cross_entropy(probs, tgt);
    REQUIRE(ce.item() == Catch::Approx(std::log(9.0)).margin(1e-12));
  }
  SECTION("two-class single pixel") {
    auto probs = Tensor<double>::from_data({1, 2, 1, 1}, {0.7, 0.3});
    auto tgt = labels_from(1, 1, 1, {0});
    REQUIRE(stalab::cross_entropy(probs, tgt).item() ==
            Catch::Approx(-std::log(0.7)).margin(1e-12));
    auto tgt1 = labels_from(1, 1, 1, {1});
    REQUIRE(stalab::cross_entropy(probs, tgt1).item() ==
            Catch::Approx(-std::log(0.3)).margin(1e-12));
  }
  SECTION("confident correct prediction costs zero") {
    auto probs = Tensor<double>::from_data({1, 2, 1, 1}, {1.0, 0.0});
    auto tgt = labels_from(1, 1, 1, {0});
    REQUIRE(stalab::cross_entropy(probs, tgt).item() == 0.0);
  }
  SECTION("zero probability is clamped, not infinite") {
    auto probs = Tensor<double>::from_data({1, 2, 1, 1}, {1.0, 0.0});
    auto tgt = labels_from(1, 1, 1, {1});
    REQUIRE(stalab::cross_entropy(probs, tgt).item() ==
            Catch::Approx(-std::log(1e-12)).margin(1e-9));
  }
  SECTION("rejects out-of-range labels and extent mismatches") {
    auto probs = Tensor<double>::full({1, 2, 1, 1}, 0.5);
    REQUIRE_THROWS_AS(stalab::cross_entropy(probs, labels_from(1, 1, 1, {2})),
                      stalab::ValueError);
    REQUIRE_THROWS_AS(stalab::cross_entropy(probs, labels_from(1, 2, 1, {0, 0})),
                      stalab::ShapeError);
  }
}

TEST_CASE("dice loss matches hand-computed values") {
  const double eps = 1e-5;
  SECTION("two-by-two case") {
    // class 1 probs [1,1,0,0], target class 1 only at pixel 0
    auto probs = Tensor<double>::from_data({1, 2, 2, 2}, {0, 0, 1, 1, 1, 1, 0, 0});
    auto tgt = labels_from(1, 2, 2, {1, 0, 0, 0});
    const double d0 = (2.0 * 2.0 + eps) / (2.0 + 3.0 + eps);
    const double d1 = (2.0 * 1.0 + eps) / (2.0 + 1.0 + eps);
    const double want = 1.0 - 0.5 * (d0 + d1);
    REQUIRE(stalab::dice_loss(probs, tgt, eps).item() == Catch::Approx(want).margin(1e-12));
  }
  SECTION("perfect one-hot prediction scores zero") {
    auto probs = Tensor<double>::from_data({1, 2, 2, 1}, {1, 0, 0, 1});
    auto tgt = labels_from(1, 2, 1, {0, 1});
    REQUIRE(stalab::dice_loss(probs, tgt, eps).item() == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("disjoint prediction scores near one") {
    auto probs = Tensor<double>::from_data({1, 2, 2, 1}, {1, 1, 0, 0});
    auto tgt = labels_from(1, 2, 1, {1, 1});
    REQUIRE(stalab::dice_loss(probs, tgt, eps).item() > 0.999);
  }
  SECTION("class absent from both prediction and target counts as perfect") {
    // class 2 has zero probability mass and no target pixels
    auto probs = Tensor<double>::from_data({1, 3, 2, 1}, {1, 0, 0, 1, 0, 0});
    auto tgt = labels_from(1, 2, 1, {0, 1});
    REQUIRE(stalab::dice_loss(probs, tgt, eps).item() == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("loss gradients agree with finite differences") {
  Rng rng(0xce11);
  for (int inst = 0; inst < 6; ++inst) {
    const int64_t n = 1 + static_cast<int64_t>(rng.next_below(2));
    const int64_t k = 2 + static_cast<int64_t>(rng.next_below(3));
    const int64_t h = 2 + static_cast<int64_t>(rng.next_below(2));
    const int64_t w = 2 + static_cast<int64_t>(rng.next_below(2));
    auto raw = Tensor<double>::zeros({n, k, h, w});
    testsupport::fill_uniform(raw, rng, -1.5, 1.5);
    raw.set_requires_grad(true);
    auto tgt = random_labels(n, h, w, k, rng.next_u64());
    const int mode = inst % 3;
    auto result = testsupport::check_gradients(
        {&raw},
        [&]() {
          auto probs = stalab::softmax(raw, 1);
          if (mode == 0) return stalab::cross_entropy(probs, tgt);
          if (mode == 1) return stalab::dice_loss(probs, tgt);
          return stalab::composite_loss(probs, tgt, 0.4, 0.6).total;
        },
        1e-5);
    INFO("instance " << inst << " worst " << result.worst);
    REQUIRE(result.ok(1e-6));
  }
}

TEST_CASE("composite loss combines the pieces with the configured weights") {
  auto probs = random_probs(1, 3, 4, 4, 99);
  auto tgt = random_labels(1, 4, 4, 3, 17);
  auto terms = stalab::composite_loss(probs, tgt, 0.4, 0.6);
  const double want = 0.4 * terms.ce.item() + 0.6 * terms.dice.item();
  REQUIRE(terms.total.item() == Catch::Approx(want).margin(1e-12));
}

TEST_CASE("dice and iou scores match hand counts") {
  // 2x2: pred [0,1,1,0], gt [0,1,0,0]
  auto pred = labels_from(1, 2, 2, {0, 1, 1, 0});
  auto gt = labels_from(1, 2, 2, {0, 1, 0, 0});
  auto d = stalab::dice_score(pred, gt, 2);
  auto i = stalab::iou_score(pred, gt, 2);
  REQUIRE(d.per_class[0] == Catch::Approx(2.0 * 2.0 / (2.0 + 3.0)));
  REQUIRE(d.per_class[1] == Catch::Approx(2.0 * 1.0 / (2.0 + 1.0)));
  REQUIRE(i.per_class[0] == Catch::Approx(2.0 / 3.0));
  REQUIRE(i.per_class[1] == Catch::Approx(1.0 / 2.0));
  REQUIRE(d.mean == Catch::Approx(0.5 * (4.0 / 5.0 + 2.0 / 3.0)));

  SECTION("identical maps score one everywhere") {
    auto s = stalab::dice_score(gt, gt, 2);
    REQUIRE(s.per_class[0] == 1.0);
    REQUIRE(s.per_class[1] == 1.0);
    REQUIRE(s.mean == 1.0);
  }
  SECTION("class absent from both maps scores one") {
    auto s = stalab::dice_score(pred, gt, 3);
    REQUIRE(s.per_class[2] == 1.0);
    auto u = stalab::iou_score(pred, gt, 3);
    REQUIRE(u.per_class[2] == 1.0);
  }
  SECTION("extent mismatch and bad ids are rejected") {
    REQUIRE_THROWS_AS(stalab::dice_score(pred, labels_from(1, 1, 2, {0, 0}), 2),
                      stalab::ShapeError);
    REQUIRE_THROWS_AS(stalab::dice_score(pred, labels_from(1, 2, 2, {0, 0, 0, 5}), 2),
                      stalab::ValueError);
  }
}

TEST_CASE("iou equals dice/(2-dice) per class on random maps") {
  Rng rng(0x3141);
  for (int inst = 0; inst < 25; ++inst) {
    const int64_t k = 2 + static_cast<int64_t>(rng.next_below(4));
    auto pred = random_labels(2, 5, 4, k, rng.next_u64());
    auto gt = random_labels(2, 5, 4, k, rng.next_u64());
    auto d = stalab::dice_score(pred, gt, k);
    auto i = stalab::iou_score(pred, gt, k);
    for (int64_t c = 0; c < k; ++c) {
      const double want = d.per_class[static_cast<size_t>(c)] /
                          (2.0 - d.per_class[static_cast<size_t>(c)]);
      REQUIRE(i.per_class[static_cast<size_t>(c)] == Catch::Approx(want).margin(1e-12));
    }
  }
}

TEST_CASE("argmax labels pick the strongest class, first on ties") {
  auto probs = Tensor<double>::from_data({1, 3, 1, 2}, {0.2, 0.5, 0.5, 0.3, 0.3, 0.2});
  auto lab = stalab::argmax_labels(probs);
  REQUIRE(lab.ids == std::vector<int32_t>{1, 0});
}

TEST_CASE("rotations and flips act identically on image and mask") {
  Sample s;
  s.h = 2;
  s.w = 3;
  s.image = {1, 2, 3, 4, 5, 6};
  s.mask = {0, 1, 2, 3, 4, 5};
  SECTION("one quarter turn clockwise") {
    stalab::rotate90(s);
    REQUIRE(s.h == 3);
    REQUIRE(s.w == 2);
    REQUIRE(s.image == std::vector<float>{4, 1, 5, 2, 6, 3});
    REQUIRE(s.mask == std::vector<int32_t>{3, 0, 4, 1, 5, 2});
  }
  SECTION("four quarter turns restore the sample") {
    Sample orig = s;
    for (int i = 0; i < 4; ++i) stalab::rotate90(s);
    REQUIRE(s.image == orig.image);
    REQUIRE(s.mask == orig.mask);
  }
  SECTION("horizontal flip") {
    stalab::flip_horizontal(s);
    REQUIRE(s.image == std::vector<float>{3, 2, 1, 6, 5, 4});
    REQUIRE(s.mask == std::vector<int32_t>{2, 1, 0, 5, 4, 3});
  }
}

TEST_CASE("augmentation preserves pixel populations and obeys probabilities") {
  Rng gen(77);
  Sample base = stalab::gen_sample(16, 3, gen);
  SECTION("probability zero leaves the sample alone") {
    Sample s = base;
    Rng rng(5);
    stalab::augment_sample(s, rng, 0.0);
    REQUIRE(s.image == base.image);
    REQUIRE(s.mask == base.mask);
  }
  SECTION("any transform keeps the multiset of pixels and labels") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
      Sample s = base;
      Rng rng(seed);
      stalab::augment_sample(s, rng, 1.0);
      auto img = s.image, ref = base.image;
      std::sort(img.begin(), img.end());
      std::sort(ref.begin(), ref.end());
      REQUIRE(img == ref);
      auto msk = s.mask, mref = base.mask;
      std::sort(msk.begin(), msk.end());
      std::sort(mref.begin(), mref.end());
      REQUIRE(msk == mref);
    }
  }
  SECTION("same stream gives the same augmentation") {
    Sample a = base, b = base;
    Rng r1(123), r2(123);
    stalab::augment_sample(a, r1, 0.5);
    stalab::augment_sample(b, r2, 0.5);
    REQUIRE(a.image == b.image);
    REQUIRE(a.mask == b.mask);
  }
}

TEST_CASE("generated samples are deterministic and well formed") {
  auto a = stalab::gen_dataset(4, 32, 3, 42, 0);
  auto b = stalab::gen_dataset(4, 32, 3, 42, 0);
  auto other_split = stalab::gen_dataset(4, 32, 3, 42, 1);
  REQUIRE(a.size() == 4);
  for (size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].image == b[i].image);
    REQUIRE(a[i].mask == b[i].mask);
  }
  bool differs = false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].image != other_split[i].image) differs = true;
  REQUIRE(differs);
  for (const Sample& s : a) {
    REQUIRE(s.h == 32);
    REQUIRE(s.w == 32);
    int64_t fg = 0;
    for (int32_t m : s.mask) {
      REQUIRE(m >= 0);
      REQUIRE(m < 3);
      if (m != 0) ++fg;
    }
    REQUIRE(fg > 0);  // every scene paints at least one foreground shape
    for (float v : s.image) {
      REQUIRE(v >= 0.0f);
      REQUIRE(v <= 1.0f);
      // values sit on the 8-bit grid so a PGM round trip is lossless
      const float scaled = v * 255.0f;
      REQUIRE(std::abs(scaled - std::round(scaled)) < 1e-4f);
    }
  }
  Rng bad(1);
  REQUIRE_THROWS_AS(stalab::gen_sample(32, 1, bad), stalab::ValueError);
  REQUIRE_THROWS_AS(stalab::gen_sample(4, 3, bad), stalab::ValueError);
}

TEST_CASE("make_batch packs images and labels") {
  std::vector<Sample> ss(2);
  ss[0] = {2, 2, {0.1f, 0.2f, 0.3f, 0.4f}, {0, 1, 1, 0}};
  ss[1] = {2, 2, {0.5f, 0.6f, 0.7f, 0.8f}, {1, 1, 0, 0}};
  auto [x, y] = stalab::make_batch<float>(ss);
  REQUIRE(x.shape() == stalab::Shape{2, 1, 2, 2});
  REQUIRE(x.at({1, 0, 1, 0}) == Catch::Approx(0.7f));
  REQUIRE(y.at(0, 0, 1) == 1);
  REQUIRE(y.at(1, 1, 1) == 0);
  ss[1].h = 4;
  ss[1].w = 1;
  REQUIRE_THROWS_AS(stalab::make_batch<float>(ss), stalab::ShapeError);
}

TEST_CASE("sgd step follows the momentum recurrence") {
  auto cfg = tiny_config();
  auto net = stalab::build_model<float>(cfg, 7);
  auto state = stalab::SgdState<float>::make(net);

  // independent copy of every learnable tensor plus its own velocity
  std::vector<std::vector<float>> ref_w, ref_v;
  stalab::for_each_param(net, [&](const std::string&, Tensor<float>& p, bool learnable) {
    if (!learnable) return;
    ref_w.push_back(p.data());
    ref_v.emplace_back(p.data().size(), 0.0f);
  });

  const double lr = 0.05, mom = 0.9, wd = 1e-4;
  Rng rng(31);
  for (int step = 0; step < 2; ++step) {
    // synthetic gradients, mirrored into the reference update
    size_t slot = 0;
    stalab::for_each_param(net, [&](const std::string&, Tensor<float>& p, bool learnable) {
      if (!learnable) return;
      p.zero_grad();
      auto& g = p.node()->grad;
      for (auto& v : g) v = static_cast<float>(rng.uniform(-1.0, 1.0));
      auto& w = ref_w[slot];
      auto& vel = ref_v[slot];
      for (size_t i = 0; i < w.size(); ++i) {
        vel[i] = static_cast<float>(mom) * vel[i] + g[i] + static_cast<float>(wd) * w[i];
        w[i] -= static_cast<float>(lr) * vel[i];
      }
      ++slot;
    });
    stalab::sgd_step(net, state, lr, mom, wd);
    slot = 0;
    stalab::for_each_param(net, [&](const std::string& name, Tensor<float>& p, bool learnable) {
      if (!learnable) return;
      INFO("step " << step << " param " << name);
      REQUIRE(p.data() == ref_w[slot]);
      ++slot;
    });
  }
}

TEST_CASE("training runs, logs rows, and is deterministic") {
  auto cfg = tiny_config();
  auto data = stalab::gen_dataset(16, 32, 3, 11, 0);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  tc.lr_initial = 1e-2;
  tc.seed = 5;

  auto net1 = stalab::build_model<float>(cfg, 3);
  std::vector<int64_t> epochs_seen;
  auto rep1 = stalab::train(net1, data, tc, [&](int64_t e) { epochs_seen.push_back(e); });
  REQUIRE(rep1.iterations == 4);
  REQUIRE(rep1.rows.size() == 4);
  REQUIRE(epochs_seen == std::vector<int64_t>{0, 1});
  for (size_t i = 0; i < rep1.rows.size(); ++i) {
    const auto& r = rep1.rows[i];
    REQUIRE(r.iter == static_cast<int64_t>(i));
    REQUIRE(r.epoch == static_cast<int64_t>(i / 2));
    REQUIRE(r.lr == stalab::poly_lr(tc.lr_initial, r.iter, 4));
    REQUIRE(std::isfinite(r.loss));
    REQUIRE(r.loss == Catch::Approx(0.4 * r.ce + 0.6 * r.dice).margin(1e-6));
  }

  auto net2 = stalab::build_model<float>(cfg, 3);
  auto rep2 = stalab::train(net2, data, tc);
  for (size_t i = 0; i < rep1.rows.size(); ++i) {
    REQUIRE(rep1.rows[i].loss == rep2.rows[i].loss);
    REQUIRE(rep1.rows[i].ce == rep2.rows[i].ce);
    REQUIRE(rep1.rows[i].dice == rep2.rows[i].dice);
  }
  bool same = true;
  stalab::for_each_param(net1, [&](const std::string& name, Tensor<float>& p, bool) {
    stalab::for_each_param(net2, [&](const std::string& name2, Tensor<float>& q, bool) {
      if (name == name2 && p.data() != q.data()) same = false;
    });
  });
  REQUIRE(same);
}

TEST_CASE("per-epoch poly horizon restarts each epoch") {
  auto cfg = tiny_config();
  auto data = stalab::gen_dataset(16, 32, 3, 11, 0);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  tc.poly_per_epoch = true;
  auto net = stalab::build_model<float>(cfg, 3);
  auto rep = stalab::train(net, data, tc);
  REQUIRE(rep.rows.size() == 4);
  REQUIRE(rep.rows[0].lr == stalab::poly_lr(tc.lr_initial, 0, 2));
  REQUIRE(rep.rows[1].lr == stalab::poly_lr(tc.lr_initial, 1, 2));
  REQUIRE(rep.rows[2].lr == rep.rows[0].lr);
  REQUIRE(rep.rows[3].lr == rep.rows[1].lr);
}

TEST_CASE("loss falls on a frozen batch") {
  auto cfg = tiny_config();
  auto data = stalab::gen_dataset(8, 32, 3, 21, 0);
  TrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 8;
  tc.aug_prob = 0.0;  // identical batch every iteration
  tc.lr_initial = 5e-2;
  auto net = stalab::build_model<float>(cfg, 9);
  auto rep = stalab::train(net, data, tc);
  REQUIRE(rep.rows.size() == 20);
  REQUIRE(rep.rows.back().loss < rep.rows.front().loss * 0.8);
}

TEST_CASE("training aborts with the batch index when the loss turns non-finite") {
  auto cfg = tiny_config();
  auto data = stalab::gen_dataset(8, 32, 3, 21, 0);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 8;
  auto net = stalab::build_model<float>(cfg, 1);
  net.head_w.data()[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    stalab::train(net, data, tc);
    FAIL("expected TrainDiverged");
  } catch (const stalab::TrainDiverged& e) {
    REQUIRE(std::string(e.what()).find("batch 0") != std::string::npos);
  }
}

TEST_CASE("training validates its configuration and inputs") {
  auto cfg = tiny_config();
  auto net = stalab::build_model<float>(cfg, 1);
  auto data = stalab::gen_dataset(4, 32, 3, 21, 0);
  TrainConfig tc;
  tc.batch_size = 8;
  REQUIRE_THROWS_AS(stalab::train(net, data, tc), stalab::ValueError);  // 4 samples, batch 8
  TrainConfig bad;
  bad.w_ce = 0.5;
  bad.w_dice = 0.6;
  REQUIRE_THROWS_AS(bad.validate(), stalab::ValueError);
  TrainConfig bad2;
  bad2.aug_prob = 1.5;
  REQUIRE_THROWS_AS(bad2.validate(), stalab::ValueError);
}

TEST_CASE("evaluation scores a split against its masks") {
  auto cfg = tiny_config();
  auto net = stalab::build_model<float>(cfg, 2);
  auto data = stalab::gen_dataset(10, 32, 3, 33, 1);
  auto [dice, iou] = stalab::evaluate(net, data, 4);
  REQUIRE(dice.per_class.size() == 3);
  REQUIRE(iou.per_class.size() == 3);
  for (int64_t c = 0; c < 3; ++c) {
    REQUIRE(dice.per_class[static_cast<size_t>(c)] >= 0.0);
    REQUIRE(dice.per_class[static_cast<size_t>(c)] <= 1.0);
    REQUIRE(iou.per_class[static_cast<size_t>(c)] <=
            dice.per_class[static_cast<size_t>(c)] + 1e-12);
  }
}
