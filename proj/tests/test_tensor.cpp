#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "stalab/rng.hpp"
#include "stalab/tensor.hpp"

using stalab::Shape;
using stalab::Tensor;

namespace {

Tensor<double> randn_like(const Shape& shape, uint64_t seed, bool rg = false) {
  stalab::Rng rng(seed);
  auto t = Tensor<double>::zeros(shape, rg);
  for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("construction and element access") {
  auto t = Tensor<double>::zeros({2, 3});
  REQUIRE(t.numel() == 6);
  REQUIRE(t.shape() == Shape{2, 3});
  t.set({1, 2}, 5.0);
  REQUIRE(t.at({1, 2}) == 5.0);
  REQUIRE(t.at({0, 0}) == 0.0);

  REQUIRE_THROWS_AS(Tensor<double>::from_data({2, 2}, {1.0, 2.0, 3.0}), stalab::ShapeError);
}

TEST_CASE("elementwise ops and suffix broadcasting") {
  auto a = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor<double>::from_data({3}, {10, 20, 30});
  auto c = stalab::add(a, b);
  REQUIRE(c.data() == std::vector<double>{11, 22, 33, 14, 25, 36});

  auto d = stalab::mul(a, b);
  REQUIRE(d.at({1, 2}) == 180.0);

  // mismatched trailing dims must throw
  auto bad = Tensor<double>::from_data({2}, {1, 2});
  REQUIRE_THROWS_AS(stalab::add(a, bad), stalab::ShapeError);
  // broadcasting is one-directional: lhs may not be smaller
  REQUIRE_THROWS_AS(stalab::add(b, a), stalab::ShapeError);
}

TEST_CASE("broadcast gradient sums over leading dims") {
  auto a = Tensor<double>::ones({2, 3}, true);
  auto b = Tensor<double>::from_data({3}, {1, 2, 3}, true);
  auto out = stalab::sum(stalab::mul(a, b));
  out.backward();
  REQUIRE(b.grad() == std::vector<double>{2, 2, 2});
  REQUIRE(a.grad() == std::vector<double>{1, 2, 3, 1, 2, 3});
}

TEST_CASE("matmul against identity and hand-computed product") {
  auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  auto eye = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
  auto p = stalab::matmul(a, eye);
  REQUIRE(p.data() == a.data());

  auto b = Tensor<double>::from_data({2, 3}, {1, 0, 2, 0, 1, 1});
  auto c = stalab::matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 3});
  REQUIRE(c.data() == std::vector<double>{1, 2, 4, 3, 4, 10});

  REQUIRE_THROWS_AS(stalab::matmul(a, Tensor<double>::zeros({3, 2})), stalab::ShapeError);
}

TEST_CASE("matmul gradient matches central differences") {
  auto a = randn_like({3, 4}, 11, true);
  auto b = randn_like({4, 2}, 12, true);
  auto w = randn_like({3, 2}, 13);  // fixed weighting so the root is scalar

  auto run = [&]() {
    auto y = stalab::mul(stalab::matmul(a, b), w);
    return stalab::sum(y);
  };
  run().backward();
  auto ga = a.grad();
  auto gb = b.grad();

  const double h = 1e-6;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double keep = a.data()[i];
    a.data()[i] = keep + h;
    const double fp = run().item();
    a.data()[i] = keep - h;
    const double fm = run().item();
    a.data()[i] = keep;
    const double fd = (fp - fm) / (2 * h);
    REQUIRE(ga[i] == Catch::Approx(fd).margin(1e-6));
  }
  for (int64_t i = 0; i < b.numel(); ++i) {
    const double keep = b.data()[i];
    b.data()[i] = keep + h;
    const double fp = run().item();
    b.data()[i] = keep - h;
    const double fm = run().item();
    b.data()[i] = keep;
    const double fd = (fp - fm) / (2 * h);
    REQUIRE(gb[i] == Catch::Approx(fd).margin(1e-6));
  }
}

TEST_CASE("softmax values") {
  auto x = Tensor<double>::from_data({2}, {0, 0});
  auto y = stalab::softmax(x, 0);
  REQUIRE(y.data()[0] == Catch::Approx(0.5).epsilon(1e-12));
  REQUIRE(y.data()[1] == Catch::Approx(0.5).epsilon(1e-12));

  // large logits must not overflow
  auto big = stalab::softmax(Tensor<double>::from_data({2}, {1000, 0}), 0);
  REQUIRE(big.data()[0] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(big.data()[1] == Catch::Approx(0.0).margin(1e-12));

  auto z = stalab::softmax(Tensor<double>::from_data({2}, {std::log(2.0), 0}), 0);
  REQUIRE(z.data()[0] == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
  REQUIRE(z.data()[1] == Catch::Approx(1.0 / 3.0).epsilon(1e-12));

  // slices along the axis sum to one
  auto m = randn_like({3, 5}, 21);
  auto sm = stalab::softmax(m, 1);
  for (int64_t r = 0; r < 3; ++r) {
    double s = 0;
    for (int64_t c = 0; c < 5; ++c) s += sm.at({r, c});
    REQUIRE(s == Catch::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("softmax gradient matches central differences") {
  auto x = randn_like({2, 4}, 31, true);
  auto w = randn_like({2, 4}, 32);
  auto run = [&]() { return stalab::sum(stalab::mul(stalab::softmax(x, 1), w)); };
  run().backward();
  auto gx = x.grad();
  const double h = 1e-6;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double fp = run().item();
    x.data()[i] = keep - h;
    const double fm = run().item();
    x.data()[i] = keep;
    REQUIRE(gx[i] == Catch::Approx((fp - fm) / (2 * h)).margin(1e-6));
  }
}

TEST_CASE("sum backward seeds ones") {
  auto x = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4}, true);
  stalab::sum(x).backward();
  REQUIRE(x.grad() == std::vector<double>{1, 1, 1, 1});
}

TEST_CASE("sum of squares gradient") {
  auto x = Tensor<double>::from_data({3}, {1, 2, 3}, true);
  stalab::sum(stalab::mul(x, x)).backward();
  REQUIRE(x.grad() == std::vector<double>{2, 4, 6});
}

TEST_CASE("leaf grads accumulate across backward calls and zero_grad resets") {
  auto x = Tensor<double>::from_data({3}, {1, 2, 3}, true);
  auto run = [&]() { stalab::sum(stalab::mul(x, x)).backward(); };
  run();
  run();
  REQUIRE(x.grad() == std::vector<double>{4, 8, 12});
  x.zero_grad();
  run();
  REQUIRE(x.grad() == std::vector<double>{2, 4, 6});
}

TEST_CASE("reused intermediate does not double-count on repeat backward") {
  // y is consumed twice in one graph; a second backward through a fresh graph
  // must still accumulate exactly one more copy of the true gradient.
  auto x = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
  auto once = [&]() {
    auto y = stalab::mul(x, x);
    auto z = stalab::add(y, y);  // z = 2x^2, dz/dx = 4x
    stalab::sum(z).backward();
  };
  once();
  REQUIRE(x.grad() == std::vector<double>{4, 8});
  once();
  REQUIRE(x.grad() == std::vector<double>{8, 16});
}

TEST_CASE("backward requires a scalar root") {
  auto x = Tensor<double>::ones({2, 2}, true);
  auto y = stalab::mul(x, x);
  REQUIRE_THROWS_AS(y.backward(), stalab::ShapeError);
}

TEST_CASE("transcendental ops") {
  auto x = Tensor<double>::from_data({3}, {-1, 0, 2}, true);
  auto r = stalab::relu(x);
  REQUIRE(r.data() == std::vector<double>{0, 0, 2});
  stalab::sum(r).backward();
  REQUIRE(x.grad() == std::vector<double>{0, 0, 1});

  auto e = stalab::exp(Tensor<double>::from_data({2}, {0, 1}));
  REQUIRE(e.data()[0] == Catch::Approx(1.0));
  REQUIRE(e.data()[1] == Catch::Approx(std::exp(1.0)));

  auto s = stalab::sqrt(Tensor<double>::from_data({2}, {4, 9}));
  REQUIRE(s.data() == std::vector<double>{2, 3});

  // log is clamped below the floor with zero gradient there
  auto lx = Tensor<double>::from_data({2}, {0.0, 1.0}, true);
  auto l = stalab::log_clamped(lx, 1e-12);
  REQUIRE(l.data()[0] == Catch::Approx(std::log(1e-12)));
  REQUIRE(l.data()[1] == 0.0);
  stalab::sum(l).backward();
  REQUIRE(lx.grad()[0] == 0.0);
  REQUIRE(lx.grad()[1] == 1.0);
}

TEST_CASE("gelu tanh form values and gradient") {
  // gelu(0) = 0, gelu(large) ~ identity, gelu(-large) ~ 0
  auto x = Tensor<double>::from_data({3}, {0.0, 6.0, -6.0});
  auto y = stalab::gelu(x);
  REQUIRE(y.data()[0] == 0.0);
  REQUIRE(y.data()[1] == Catch::Approx(6.0).margin(1e-6));
  REQUIRE(y.data()[2] == Catch::Approx(0.0).margin(1e-6));

  auto g = randn_like({8}, 41, true);
  auto w = randn_like({8}, 42);
  auto run = [&]() { return stalab::sum(stalab::mul(stalab::gelu(g), w)); };
  run().backward();
  auto gg = g.grad();
  const double h = 1e-6;
  for (int64_t i = 0; i < g.numel(); ++i) {
    const double keep = g.data()[i];
    g.data()[i] = keep + h;
    const double fp = run().item();
    g.data()[i] = keep - h;
    const double fm = run().item();
    g.data()[i] = keep;
    REQUIRE(gg[i] == Catch::Approx((fp - fm) / (2 * h)).margin(1e-6));
  }
}

TEST_CASE("reshape and transpose") {
  auto x = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  auto r = stalab::reshape(x, {3, 2});
  REQUIRE(r.data() == x.data());
  REQUIRE_THROWS_AS(stalab::reshape(x, {4, 2}), stalab::ShapeError);

  auto t = stalab::transpose(x, 0, 1);
  REQUIRE(t.shape() == Shape{3, 2});
  REQUIRE(t.data() == std::vector<double>{1, 4, 2, 5, 3, 6});

  // round trip through transpose is the identity on gradients
  auto w = randn_like({3, 2}, 51);
  stalab::sum(stalab::mul(t, w)).backward();
  auto wt = stalab::transpose(w, 0, 1);
  REQUIRE(x.grad() == wt.data());

  // higher-rank axis swap
  auto h = randn_like({2, 3, 4}, 52);
  auto ht = stalab::transpose(h, 0, 2);
  REQUIRE(ht.shape() == Shape{4, 3, 2});
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 3; ++j)
      for (int64_t k = 0; k < 4; ++k) REQUIRE(ht.at({k, j, i}) == h.at({i, j, k}));
}

TEST_CASE("concat and slice round trip") {
  auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4}, true);
  auto b = Tensor<double>::from_data({2, 3}, {5, 6, 7, 8, 9, 10}, true);
  auto c = stalab::concat<double>({a, b}, 1);
  REQUIRE(c.shape() == Shape{2, 5});
  REQUIRE(c.data() == std::vector<double>{1, 2, 5, 6, 7, 3, 4, 8, 9, 10});

  auto sa = stalab::slice(c, 1, 0, 2);
  auto sb = stalab::slice(c, 1, 2, 3);
  REQUIRE(sa.data() == a.data());
  REQUIRE(sb.data() == b.data());

  // gradient splits back to the inputs
  auto w = randn_like({2, 5}, 61);
  stalab::sum(stalab::mul(c, w)).backward();
  REQUIRE(a.grad()[0] == w.at({0, 0}));
  REQUIRE(a.grad()[3] == w.at({1, 1}));
  REQUIRE(b.grad()[0] == w.at({0, 2}));
  REQUIRE(b.grad()[5] == w.at({1, 4}));

  REQUIRE_THROWS_AS(stalab::concat<double>({a, Tensor<double>::zeros({3, 2})}, 1),
                    stalab::ShapeError);
  REQUIRE_THROWS_AS(stalab::slice(c, 1, 4, 3), stalab::ShapeError);
}

TEST_CASE("sum_axis reduces one axis") {
  auto x = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  auto s0 = stalab::sum_axis(x, 0);
  REQUIRE(s0.shape() == Shape{3});
  REQUIRE(s0.data() == std::vector<double>{5, 7, 9});
  auto s1 = stalab::sum_axis(x, 1);
  REQUIRE(s1.shape() == Shape{2});
  REQUIRE(s1.data() == std::vector<double>{6, 15});

  stalab::sum(s1).backward();
  REQUIRE(x.grad() == std::vector<double>(6, 1.0));
}

TEST_CASE("mean") {
  auto x = Tensor<double>::from_data({4}, {1, 2, 3, 6}, true);
  auto m = stalab::mean(x);
  REQUIRE(m.item() == 3.0);
  m.backward();
  REQUIRE(x.grad() == std::vector<double>(4, 0.25));
}

TEST_CASE("identical computations are bitwise deterministic") {
  auto run = [](uint64_t seed) {
    auto a = randn_like({7, 5}, seed, true);
    auto b = randn_like({5, 3}, seed + 1, true);
    auto y = stalab::softmax(stalab::matmul(a, b), 1);
    stalab::sum(stalab::mul(y, y)).backward();
    return std::pair{y.data(), a.grad()};
  };
  auto [y1, g1] = run(99);
  auto [y2, g2] = run(99);
  REQUIRE(y1 == y2);
  REQUIRE(g1 == g2);
}

TEST_CASE("rng streams are deterministic and substreams differ") {
  stalab::Rng a(7), b(7), c(8);
  for (int i = 0; i < 100; ++i) {
    auto va = a.next_u64();
    REQUIRE(va == b.next_u64());
  }
  REQUIRE(a.next_u64() != c.next_u64());

  REQUIRE(stalab::derive_seed(1, 2, 3) == stalab::derive_seed(1, 2, 3));
  REQUIRE(stalab::derive_seed(1, 2, 3) != stalab::derive_seed(1, 3, 2));
  REQUIRE(stalab::derive_seed(1, 2, 3) != stalab::derive_seed(2, 2, 3));

  // uniform and bernoulli stay in range
  stalab::Rng r(123);
  int hits = 0;
  for (int i = 0; i < 10000; ++i) {
    double u = r.next_double();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    if (r.bernoulli(0.25)) ++hits;
    REQUIRE(r.next_below(10) < 10);
  }
  REQUIRE(hits > 2200);
  REQUIRE(hits < 2800);
}
