#include <cmath>
#include <random>

#include "cll/gradcheck.hpp"
#include "cll/kernels.hpp"
#include "cll/mac_counter.hpp"
#include "cll/ops.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace cll;
using cll::test::brute_conv2d;
using cll::test::random_tensor;

namespace {

Tensor<float> bias_zeros(std::size_t c) { return Tensor<float>(Shape{c, 1, 1, 1}); }

}  // namespace

TEST_CASE("tensor invariants") {
  Tensor<float> t(Shape{2, 3, 4, 5});
  CHECK(t.size() == 120);
  CHECK_THROWS_AS(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  Tensor<double> bad(Shape{1, 1, 1, 2});
  bad[1] = NAN;
  CHECK_THROWS_AS(validate_finite(bad, "probe"), NonFiniteError);
}

TEST_CASE("shape mismatch names the offending axes") {
  try {
    require_same_shape(Shape{1, 2, 3, 4}, Shape{1, 5, 3, 6}, "op");
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("C 2 vs 5") != std::string::npos);
    CHECK(msg.find("W 4 vs 6") != std::string::npos);
    CHECK(msg.find("N ") == std::string::npos);
  }
}

TEST_CASE("conv2d examples") {
  SUBCASE("1x1 scalar scaling") {
    Tensor<float> x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor<float> w(Shape{1, 1, 1, 1}, {2});
    const auto y = kernels::conv2d_forward(x, w, bias_zeros(1), 0);
    CHECK(y.bitwise_equal(Tensor<float>(Shape{1, 1, 2, 2}, {2, 4, 6, 8})));
  }
  SUBCASE("per-channel identity 1x1 is exactly the identity") {
    std::mt19937_64 rng(3);
    const auto x = random_tensor<float>(Shape{2, 5, 6, 7}, rng);
    Tensor<float> w(Shape{5, 5, 1, 1});
    for (std::size_t c = 0; c < 5; ++c) w.at(c, c, 0, 0) = 1.0f;
    CHECK(kernels::conv2d_forward(x, w, bias_zeros(5), 0).bitwise_equal(x));
  }
  SUBCASE("all-ones 3x3 with padding: centre 9, corner 4") {
    Tensor<float> x(Shape{1, 1, 3, 3}, 1.0f);
    Tensor<float> w(Shape{1, 1, 3, 3}, 1.0f);
    const auto y = kernels::conv2d_forward(x, w, bias_zeros(1), 1);
    const auto ref = brute_conv2d(x, w, bias_zeros(1), 1);
    CHECK(ref.at(0, 0, 1, 1) == 9.0f);
    CHECK(ref.at(0, 0, 0, 0) == 4.0f);
    CHECK(y.at(0, 0, 1, 1) == 9.0f);
    CHECK(y.at(0, 0, 0, 0) == 4.0f);
    CHECK(y.at(0, 0, 2, 2) == 4.0f);
    CHECK(y.at(0, 0, 0, 1) == 6.0f);
  }
  SUBCASE("random instances match direct summation") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 10; ++i) {
      const auto x = random_tensor<double>(Shape{2, 3, 7, 5}, rng);
      const auto w = random_tensor<double>(Shape{4, 3, 3, 3}, rng);
      const auto b = random_tensor<double>(Shape{4, 1, 1, 1}, rng);
      CHECK(max_abs_diff(kernels::conv2d_forward(x, w, b, 1), brute_conv2d(x, w, b, 1)) < 1e-12);
      CHECK(max_abs_diff(kernels::conv2d_forward(x, w, b, 0), brute_conv2d(x, w, b, 0)) < 1e-12);
    }
  }
  SUBCASE("output extent H + 2p - K + 1") {
    Tensor<float> x(Shape{1, 2, 6, 9});
    Tensor<float> w(Shape{3, 2, 5, 3});
    CHECK(kernels::conv2d_forward(x, w, bias_zeros(3), 0).shape() == Shape{1, 3, 2, 7});
    CHECK(kernels::conv2d_forward(x, w, bias_zeros(3), 2).shape() == Shape{1, 3, 6, 11});
  }
}

TEST_CASE("conv2d errors") {
  Tensor<float> x(Shape{1, 2, 4, 4});
  CHECK_THROWS_AS(kernels::conv2d_forward(x, Tensor<float>(Shape{1, 3, 3, 3}), bias_zeros(1), 1), DimensionError);
  CHECK_THROWS_AS(kernels::conv2d_forward(x, Tensor<float>(Shape{1, 2, 2, 2}), bias_zeros(1), 1), DimensionError);
  CHECK_THROWS_AS(kernels::conv2d_forward(x, Tensor<float>(Shape{1, 2, 3, 3}), bias_zeros(2), 1), DimensionError);
  try {
    kernels::conv2d_forward(x, Tensor<float>(Shape{1, 3, 3, 3}), bias_zeros(1), 1);
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("C_in") != std::string::npos);
  }
}

TEST_CASE("conv2d_backward") {
  SUBCASE("1x1 product rule") {
    Tensor<double> x(Shape{1, 1, 1, 1}, 3.0);
    Tensor<double> w(Shape{1, 1, 1, 1}, -2.0);
    const auto g = kernels::conv2d_backward(Tensor<double>(Shape{1, 1, 1, 1}, 1.0), x, w, 0);
    CHECK(g.weight[0] == 3.0);
    CHECK(g.input[0] == -2.0);
    CHECK(g.bias[0] == 1.0);
  }
  SUBCASE("zero upstream gradient") {
    std::mt19937_64 rng(5);
    const auto x = random_tensor<double>(Shape{2, 2, 4, 4}, rng);
    const auto w = random_tensor<double>(Shape{3, 2, 3, 3}, rng);
    const auto g = kernels::conv2d_backward(Tensor<double>(Shape{2, 3, 4, 4}), x, w, 1);
    for (double v : g.input.data()) CHECK(v == 0.0);
    for (double v : g.weight.data()) CHECK(v == 0.0);
    for (double v : g.bias.data()) CHECK(v == 0.0);
  }
  SUBCASE("finite differences on (1,2,4,4) x (3,2,3,3)") {
    std::mt19937_64 rng(17);
    const auto r = random_tensor<double>(Shape{1, 3, 4, 4}, rng);
    const std::vector<Tensor<double>> point{random_tensor<double>(Shape{1, 2, 4, 4}, rng),
                                            random_tensor<double>(Shape{3, 2, 3, 3}, rng),
                                            random_tensor<double>(Shape{3, 1, 1, 1}, rng)};
    const auto res = grad_check(
        [&](Tape<double>& t, std::span<const Var> v) {
          return ops::weighted_sum(t, ops::conv2d(t, v[0], v[1], v[2], 1), r);
        },
        point);
    CHECK(res.max_rel_error <= 1e-6);
    CHECK(res.checked == 32 + 54 + 3);
  }
  SUBCASE("missing saved activations") {
    CHECK_THROWS_AS(kernels::conv2d_backward(Tensor<double>(Shape{1, 1, 2, 2}), Tensor<double>(),
                                             Tensor<double>(Shape{1, 1, 1, 1}), 0),
                    TapeError);
    CHECK_THROWS_AS(kernels::conv2d_backward(Tensor<double>(Shape{1, 2, 2, 2}), Tensor<double>(Shape{1, 1, 2, 2}),
                                             Tensor<double>(Shape{1, 1, 1, 1}), 0),
                    TapeError);
  }
}

TEST_CASE("grouped_pointwise_conv") {
  std::mt19937_64 rng(23);
  SUBCASE("per-group identity weights") {
    const auto x = random_tensor<float>(Shape{2, 6, 3, 3}, rng);
    Tensor<float> w(Shape{6, 3, 1, 1});
    for (std::size_t c = 0; c < 6; ++c) w[c * 3 + c % 3] = 1.0f;
    CHECK(kernels::grouped_pointwise_forward(x, w, bias_zeros(6), 2).bitwise_equal(x));
  }
  SUBCASE("fully grouped doubling") {
    const auto x = random_tensor<float>(Shape{1, 4, 2, 3}, rng);
    Tensor<float> w(Shape{4, 1, 1, 1}, 2.0f);
    const auto y = kernels::grouped_pointwise_forward(x, w, bias_zeros(4), 4);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == 2.0f * x[i]);
  }
  SUBCASE("C=4, G=2 equals dense 1x1 convs on each half") {
    const auto x = random_tensor<double>(Shape{2, 4, 3, 5}, rng);
    const auto w = random_tensor<double>(Shape{4, 2, 1, 1}, rng);
    const auto b = random_tensor<double>(Shape{4, 1, 1, 1}, rng);
    const auto y = kernels::grouped_pointwise_forward(x, w, b, 2);
    for (std::size_t g = 0; g < 2; ++g) {
      Tensor<double> wg(Shape{2, 2, 1, 1});
      Tensor<double> bg(Shape{2, 1, 1, 1});
      for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t j = 0; j < 2; ++j) wg.at(r, j, 0, 0) = w.at(2 * g + r, j, 0, 0);
        bg[r] = b[2 * g + r];
      }
      const auto ref = brute_conv2d(cll::test::slice_channels(x, 2 * g, 2), wg, bg, 0);
      CHECK(max_abs_diff(cll::test::slice_channels(y, 2 * g, 2), ref) < 1e-12);
    }
  }
  SUBCASE("groups must divide channels") {
    CHECK_THROWS_AS(kernels::grouped_pointwise_forward(Tensor<float>(Shape{1, 6, 1, 1}),
                                                       Tensor<float>(Shape{6, 2, 1, 1}), bias_zeros(6), 4),
                    ConfigError);
  }
  SUBCASE("perturbing a channel only moves outputs in its group") {
    const std::size_t groups = 4;
    const auto x = random_tensor<double>(Shape{1, 8, 2, 2}, rng);
    const auto w = random_tensor<double>(Shape{8, 2, 1, 1}, rng);
    const auto b = random_tensor<double>(Shape{8, 1, 1, 1}, rng);
    const auto y = kernels::grouped_pointwise_forward(x, w, b, groups);
    for (std::size_t c = 0; c < 8; ++c) {
      auto xp = x;
      for (std::size_t q = 0; q < 4; ++q) xp[c * 4 + q] += 0.5;
      const auto yp = kernels::grouped_pointwise_forward(xp, w, b, groups);
      for (std::size_t o = 0; o < 8; ++o) {
        if (o / 2 == c / 2) continue;
        for (std::size_t q = 0; q < 4; ++q) CHECK(yp[o * 4 + q] == y[o * 4 + q]);
      }
    }
  }
}

TEST_CASE("prelu") {
  Tensor<float> x(Shape{1, 1, 1, 4}, {3.0f, -2.0f, -7.0f, 0.0f});
  const auto y = kernels::prelu_forward(x, 0.25f);
  CHECK(y[0] == 3.0f);
  CHECK(y[1] == -0.5f);
  CHECK(kernels::prelu_forward(x, 1.0f).bitwise_equal(x));
  CHECK(kernels::prelu_forward(x, 1.0f)[2] == -7.0f);

  const auto g = kernels::prelu_backward(Tensor<float>(x.shape(), 1.0f), x, 0.25f);
  CHECK(g.input[0] == 1.0f);
  CHECK(g.input[1] == 0.25f);
  CHECK(g.input[3] == 1.0f);  // positive branch at zero
  CHECK(g.slope == doctest::Approx(-9.0));
}

TEST_CASE("blend") {
  Tensor<float> a(Shape{1, 1, 1, 1}, 2.0f);
  Tensor<float> b(Shape{1, 1, 1, 1}, 4.0f);
  CHECK(kernels::blend(a, b, 0.0f).bitwise_equal(a));
  CHECK(kernels::blend(a, b, 1.0f).bitwise_equal(b));
  CHECK(kernels::blend(a, b, 0.25f)[0] == 2.5f);
  CHECK_THROWS_AS(kernels::blend(a, Tensor<float>(Shape{1, 1, 1, 2}), 0.5f), DimensionError);

  Tape<float> tape;
  const Var va = tape.leaf(a);
  const Var vb = tape.leaf(b);
  CHECK_THROWS_AS(ops::blend(tape, va, vb, 1.5), RangeError);
  CHECK_THROWS_AS(ops::blend(tape, va, vb, -0.1), RangeError);
  CHECK(tape.value(ops::blend(tape, va, vb, 1.5, ops::AlphaPolicy::clamp))[0] == 4.0f);
  CHECK(tape.value(ops::blend(tape, va, vb, -3.0, ops::AlphaPolicy::clamp))[0] == 2.0f);
  CHECK(tape.value(ops::blend(tape, va, vb, 1.5, ops::AlphaPolicy::extrapolate))[0] == 5.0f);
}

TEST_CASE("blend is linear in alpha") {
  std::mt19937_64 rng(29);
  for (int i = 0; i < 20; ++i) {
    const auto a = random_tensor<double>(Shape{2, 3, 4, 4}, rng, -10, 10);
    const auto b = random_tensor<double>(Shape{2, 3, 4, 4}, rng, -10, 10);
    const auto mid = kernels::blend(a, b, 0.5);
    const auto lo = kernels::blend(a, b, 0.0);
    const auto hi = kernels::blend(a, b, 1.0);
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double mean = 0.5 * (lo[k] + hi[k]);
      CHECK(std::abs(mid[k] - mean) <= 4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(mean)));
    }
  }
}

TEST_CASE("losses") {
  Tensor<float> zero(Shape{1, 1, 2, 2});
  Tensor<float> half(Shape{1, 1, 2, 2}, 0.5f);
  Tape<float> tape;
  const Var p = tape.leaf(zero);
  const Var q = tape.leaf(half);
  CHECK(tape.value(ops::loss_l2(tape, p, p))[0] == 0.0f);
  CHECK(tape.value(ops::loss_l1(tape, q, q))[0] == 0.0f);
  CHECK(tape.value(ops::loss_l2(tape, p, q))[0] == 0.25f);
  CHECK(tape.value(ops::loss_l1(tape, p, q))[0] == 0.5f);
  CHECK_THROWS_AS(ops::loss_l2(tape, p, tape.leaf(Tensor<float>(Shape{1, 1, 1, 4}))), DimensionError);

  SUBCASE("L1 subgradient sign(pred - target) / count") {
    std::mt19937_64 rng(31);
    const auto pred = random_tensor<double>(Shape{2, 2, 3, 3}, rng);
    const auto target = random_tensor<double>(Shape{2, 2, 3, 3}, rng);
    Tape<double> t;
    const Var vp = t.leaf(pred, true);
    t.backward(ops::loss_l1(t, vp, t.leaf(target)));
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double s = pred[i] > target[i] ? 1.0 : -1.0;
      CHECK(t.grad(vp)[i] == doctest::Approx(s / 36.0));
    }
    const auto res = grad_check([](Tape<double>& tt, std::span<const Var> v) { return ops::loss_l1(tt, v[0], v[1]); },
                                {pred, target});
    CHECK(res.max_rel_error <= 1e-6);
  }
}

TEST_CASE("grad_check") {
  SUBCASE("linear map is exact to 1e-9") {
    std::mt19937_64 rng(37);
    const auto r = random_tensor<double>(Shape{1, 2, 3, 3}, rng);
    const auto res = grad_check([&](Tape<double>& t, std::span<const Var> v) { return ops::weighted_sum(t, v[0], r); },
                                {random_tensor<double>(Shape{1, 2, 3, 3}, rng)});
    CHECK(res.max_rel_error <= 1e-9);
  }
  SUBCASE("non-finite values are an oracle failure") {
    Tensor<double> x(Shape{1, 1, 1, 1}, 1.0);
    const auto r = Tensor<double>(Shape{1, 1, 1, 1}, INFINITY);
    CHECK_THROWS_AS(
        grad_check([&](Tape<double>& t, std::span<const Var> v) { return ops::weighted_sum(t, v[0], r); }, {x}),
        OracleError);
  }
  SUBCASE("excluded coordinates are skipped") {
    Tensor<double> x(Shape{1, 1, 1, 3}, std::vector<double>{0.5, 1e-7, -0.5});
    const auto res = grad_check(
        [](Tape<double>& t, std::span<const Var> v) {
          return ops::weighted_sum(t, ops::prelu(t, v[0], 0.3), Tensor<double>(Shape{1, 1, 1, 3}, 1.0));
        },
        {x}, kGradCheckEpsilon, [&](std::size_t, std::size_t i) { return std::abs(x[i]) < 1e-3; });
    CHECK(res.excluded == 1);
    CHECK(res.checked == 2);
    CHECK(res.max_rel_error <= 1e-9);
  }
}

TEST_CASE("randomised gradient suite over every operation") {
  const auto reports = run_gradient_suite(2024, 8, kSuiteEpsilon);
  CHECK(reports.size() == 11);
  for (const auto& r : reports) {
    INFO(r.op);
    CHECK(r.instances == 8);
    CHECK(r.coordinates > 0);
    CHECK(r.worst_rel_error <= 1e-6);
  }
}

TEST_CASE("tape") {
  SUBCASE("backward of a sum equals the sum of backwards") {
    std::mt19937_64 rng(41);
    const auto x = random_tensor<double>(Shape{1, 2, 4, 4}, rng);
    const auto w = random_tensor<double>(Shape{3, 2, 3, 3}, rng);
    const auto b = random_tensor<double>(Shape{3, 1, 1, 1}, rng);
    const auto target = random_tensor<double>(Shape{1, 3, 4, 4}, rng);
    const auto r = random_tensor<double>(Shape{1, 3, 4, 4}, rng);

    auto run = [&](int which) {
      Tape<double> t;
      const Var vx = t.leaf(x, true);
      const Var vw = t.leaf(w, true);
      const Var vb = t.leaf(b);
      const Var y = ops::conv2d(t, vx, vw, vb, 1);
      const Var l1 = ops::loss_l2(t, y, t.leaf(target));
      const Var l2 = ops::weighted_sum(t, ops::prelu(t, y, 0.2), r);
      const Var root = which == 0 ? l1 : (which == 1 ? l2 : ops::add(t, l1, l2));
      t.backward(root);
      return std::pair{t.grad(vx), t.grad(vw)};
    };
    const auto [gx1, gw1] = run(0);
    const auto [gx2, gw2] = run(1);
    const auto [gx, gw] = run(2);
    for (std::size_t i = 0; i < gx.size(); ++i) CHECK(gx[i] == doctest::Approx(gx1[i] + gx2[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < gw.size(); ++i) CHECK(gw[i] == doctest::Approx(gw1[i] + gw2[i]).epsilon(1e-12));
  }
  SUBCASE("every reachable requires_grad leaf gets a gradient") {
    Tape<float> t;
    const Var a = t.leaf(Tensor<float>(Shape{1, 1, 2, 2}, 1.0f), true);
    const Var b = t.leaf(Tensor<float>(Shape{1, 1, 2, 2}, 2.0f), true);
    const Var unused = t.leaf(Tensor<float>(Shape{1, 1, 2, 2}, 3.0f), true);
    const Var frozen = t.leaf(Tensor<float>(Shape{1, 1, 2, 2}, 4.0f));
    const Var s = ops::add(t, ops::add(t, a, b), frozen);
    t.backward(ops::weighted_sum(t, s, Tensor<float>(Shape{1, 1, 2, 2}, 1.0f)));
    CHECK(t.has_grad(a));
    CHECK(t.has_grad(b));
    CHECK_FALSE(t.has_grad(unused));
    CHECK_FALSE(t.has_grad(frozen));
    CHECK_THROWS_AS(t.grad(unused), TapeError);
  }
  SUBCASE("non-scalar root needs a seed") {
    Tape<float> t;
    const Var a = t.leaf(Tensor<float>(Shape{1, 1, 2, 2}), true);
    CHECK_THROWS_AS(t.backward(a), DimensionError);
  }
}

TEST_CASE("MAC instrumentation of conv2d matches the scalar loop") {
  std::mt19937_64 rng(43);
  const auto x = random_tensor<double>(Shape{1, 4, 8, 8}, rng);
  const auto w = random_tensor<double>(Shape{4, 4, 3, 3}, rng);
  const auto b = random_tensor<double>(Shape{4, 1, 1, 1}, rng);
  std::uint64_t multiplications = 0;
  brute_conv2d(x, w, b, 1, &multiplications);
  MacCounter counter;
  {
    MacScope scope(counter);
    kernels::conv2d_forward(x, w, b, 1);
  }
  CHECK(counter.total() == multiplications);
  CHECK(counter.total() == 8u * 8u * 3u * 3u * 4u * 4u);
}
