// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "ctxisp/losses.hpp"
#include "ctxisp/ops.hpp"
#include "ctxisp/rng.hpp"
#include "helpers.hpp"

using namespace ctxisp;
using testutil::conv2d_direct;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

struct ConvConfig {
  int b, cin, h, w, cout, k, stride, pad, groups;
  bool bias;
};

const ConvConfig kConvConfigs[] = {
    {1, 3, 4, 4, 2, 3, 1, 1, 1, true},    // small general case
    {2, 3, 9, 11, 5, 1, 1, 0, 1, true},   // pointwise path
    {2, 3, 9, 11, 5, 1, 1, 0, 1, false},  // pointwise, no bias
    {1, 4, 8, 8, 4, 3, 1, 1, 4, true},    // depthwise path
    {2, 6, 7, 7, 6, 3, 2, 1, 6, true},    // depthwise, strided
    {2, 4, 10, 9, 6, 3, 2, 1, 2, true},   // grouped general
    {1, 3, 12, 12, 2, 5, 2, 2, 1, true},  // 5x5 stride 2
    {1, 2, 9, 9, 3, 7, 1, 3, 1, false},   // 7x7 wide padding
    {1, 4, 9, 9, 3, 7, 2, 0, 1, true},    // valid (no padding), strided
};

}  // namespace

TEST_CASE("conv2d matches an independent direct convolution") {
  Rng rng(101);
  for (const auto& c : kConvConfigs) {
    CAPTURE(c.cout);
    CAPTURE(c.k);
    CAPTURE(c.groups);
    auto x = random_tensor<float>({c.b, c.cin, c.h, c.w}, rng);
    auto w =
        random_tensor<float>({c.cout, c.cin / c.groups, c.k, c.k}, rng);
    Tensor<float> bias;
    if (c.bias) bias = random_tensor<float>({c.cout}, rng);
    auto got = conv2d(x, w, bias, c.stride, c.pad, c.groups);
    auto want = conv2d_direct(x, w, bias, c.stride, c.pad, c.groups);
    REQUIRE(got.shape() == want.shape());
    CHECK(max_abs_diff(got, want) < 1e-5f);
  }
}

TEST_CASE("conv2d small pinned case is tight") {
  Rng rng(7);
  auto x = random_tensor<float>({1, 3, 4, 4}, rng);
  auto w = random_tensor<float>({2, 3, 3, 3}, rng);
  auto b = random_tensor<float>({2}, rng);
  auto got = conv2d(x, w, b, 1, 1, 1);
  auto want = conv2d_direct(x, w, b, 1, 1, 1);
  CHECK(max_abs_diff(got, want) < 1e-6f);
}

TEST_CASE("conv2d double precision matches the oracle tightly") {
  Rng rng(55);
  auto x = random_tensor<double>({2, 4, 8, 8}, rng);
  auto w = random_tensor<double>({6, 2, 3, 3}, rng);
  auto b = random_tensor<double>({6}, rng);
  auto got = conv2d(x, w, b, 1, 1, 2);
  auto want = conv2d_direct(x, w, b, 1, 1, 2);
  CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("conv2d rejects inconsistent shapes") {
  Rng rng(1);
  auto x = random_tensor<float>({1, 3, 4, 4}, rng);
  auto w = random_tensor<float>({2, 2, 3, 3}, rng);  // Cin/groups mismatch
  CHECK_THROWS_AS(conv2d(x, w, Tensor<float>{}, 1, 1, 1),
                  std::invalid_argument);
}

TEST_CASE("gelu hits the exact normal-CDF anchor values") {
  auto x = Tensor<double>::from({1, 1, 1, 3}, {0.0, 1.0, -1.0});
  auto y = gelu(x);
  // x * Phi(x) with Phi(1) = 0.841344746...
  CHECK(y.at({0, 0, 0, 0}) == 0.0);
  CHECK(y.at({0, 0, 0, 1}) ==
        doctest::Approx(0.8413447460685429).epsilon(1e-12));
  CHECK(y.at({0, 0, 0, 2}) ==
        doctest::Approx(-(1.0 - 0.8413447460685429)).epsilon(1e-10));
}

TEST_CASE("sigmoid hits pinned values") {
  auto x = Tensor<double>::from({1, 1, 1, 2}, {0.0, 2.0});
  auto y = sigmoid(x);
  CHECK(y.at({0, 0, 0, 0}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(y.at({0, 0, 0, 1}) ==
        doctest::Approx(0.8807970779778823).epsilon(1e-12));
}

TEST_CASE("layer_norm_channels matches a per-pixel oracle") {
  Rng rng(19);
  const int B = 2, C = 5, H = 4, W = 3;
  auto x = random_tensor<double>({B, C, H, W}, rng, -2.0, 2.0);
  auto gamma = random_tensor<double>({C}, rng, 0.5, 1.5);
  auto beta = random_tensor<double>({C}, rng, -0.5, 0.5);
  const double eps = 1e-6;
  auto y = layer_norm_channels(x, gamma, beta, eps);

  for (int b = 0; b < B; ++b)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        double mean = 0;
        for (int c = 0; c < C; ++c) mean += x.at({b, c, h, w});
        mean /= C;
        double var = 0;
        for (int c = 0; c < C; ++c) {
          double d = x.at({b, c, h, w}) - mean;
          var += d * d;
        }
        var /= C;
        for (int c = 0; c < C; ++c) {
          double want = gamma.at({c}) * (x.at({b, c, h, w}) - mean) /
                            std::sqrt(var + eps) +
                        beta.at({c});
          CHECK(y.at({b, c, h, w}) == doctest::Approx(want).epsilon(1e-12));
        }
      }
}

TEST_CASE("avg_pool2d matches a window-mean oracle") {
  Rng rng(23);
  auto x = random_tensor<double>({1, 2, 6, 8}, rng);
  auto y = avg_pool2d(x, 2, 2);
  REQUIRE(y.shape() == Shape{1, 2, 3, 4});
  for (int c = 0; c < 2; ++c)
    for (int oh = 0; oh < 3; ++oh)
      for (int ow = 0; ow < 4; ++ow) {
        double s = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            s += x.at({0, c, oh * 2 + dy, ow * 2 + dx});
        CHECK(y.at({0, c, oh, ow}) == doctest::Approx(s / 4).epsilon(1e-13));
      }
}

TEST_CASE("global_avg_pool equals the per-channel mean") {
  Rng rng(29);
  auto x = random_tensor<double>({2, 3, 5, 7}, rng);
  auto y = global_avg_pool(x);
  REQUIRE(y.shape() == Shape{2, 3, 1, 1});
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c) {
      double s = 0;
      for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 7; ++w) s += x.at({b, c, h, w});
      CHECK(y.at({b, c, 0, 0}) == doctest::Approx(s / 35).epsilon(1e-13));
    }
}

TEST_CASE("channel_scale broadcasts [B,C,1,1], [1,C,1,1] and [B,C]") {
  Rng rng(31);
  auto x = random_tensor<double>({2, 3, 4, 4}, rng);

  auto check_scaled = [&](const Tensor<double>& y,
                          std::function<double(int, int)> s) {
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 3; ++c)
        for (int h = 0; h < 4; ++h)
          for (int w = 0; w < 4; ++w)
            CHECK(y.at({b, c, h, w}) ==
                  doctest::Approx(x.at({b, c, h, w}) * s(b, c))
                      .epsilon(1e-14));
  };

  auto s_bc = random_tensor<double>({2, 3, 1, 1}, rng, 0.2, 2.0);
  check_scaled(channel_scale(x, s_bc),
               [&](int b, int c) { return s_bc.at({b, c, 0, 0}); });

  auto s_shared = random_tensor<double>({1, 3, 1, 1}, rng, 0.2, 2.0);
  check_scaled(channel_scale(x, s_shared),
               [&](int, int c) { return s_shared.at({0, c, 0, 0}); });

  auto s_flat = random_tensor<double>({2, 3}, rng, 0.2, 2.0);
  check_scaled(channel_scale(x, s_flat),
               [&](int b, int c) { return s_flat.at({b, c}); });
}

TEST_CASE("elementwise ops match scalar formulas") {
  Rng rng(37);
  auto a = random_tensor<double>({1, 2, 3, 3}, rng, 0.5, 2.0);
  auto b = random_tensor<double>({1, 2, 3, 3}, rng, 0.5, 2.0);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(add(a, b).data()[i] == a.data()[i] + b.data()[i]);
    CHECK(sub(a, b).data()[i] == a.data()[i] - b.data()[i]);
    CHECK(mul(a, b).data()[i] == a.data()[i] * b.data()[i]);
    CHECK(divide(a, b).data()[i] == a.data()[i] / b.data()[i]);
    CHECK(scalar_mul(a, 2.5).data()[i] == 2.5 * a.data()[i]);
    CHECK(scalar_add(a, -0.5).data()[i] == a.data()[i] - 0.5);
    CHECK(sqrt_shift(a, 1e-8).data()[i] ==
          doctest::Approx(std::sqrt(a.data()[i] + 1e-8)).epsilon(1e-15));
    CHECK(abs_val(sub(a, b)).data()[i] ==
          std::abs(a.data()[i] - b.data()[i]));
  }
}

TEST_CASE("clamp01 clamps and blocks gradient outside the interval") {
  Tape<double> tape;
  auto x = Tensor<double>::variable({1, 1, 1, 4}, &tape);
  double vals[] = {-0.5, 0.25, 0.75, 1.5};
  for (int i = 0; i < 4; ++i) x.data()[i] = vals[i];
  auto y = clamp01(x);
  CHECK(y.data()[0] == 0.0);
  CHECK(y.data()[1] == 0.25);
  CHECK(y.data()[2] == 0.75);
  CHECK(y.data()[3] == 1.0);
  auto loss = mean_all(y);
  backward(loss);
  CHECK(x.grad_data()[0] == 0.0);
  CHECK(x.grad_data()[1] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(x.grad_data()[2] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(x.grad_data()[3] == 0.0);
}

TEST_CASE("sum_channels and mean_all match direct sums") {
  Rng rng(41);
  auto x = random_tensor<double>({2, 4, 3, 3}, rng);
  auto sc = sum_channels(x);
  REQUIRE(sc.shape() == Shape{2, 1, 3, 3});
  for (int b = 0; b < 2; ++b)
    for (int h = 0; h < 3; ++h)
      for (int w = 0; w < 3; ++w) {
        double s = 0;
        for (int c = 0; c < 4; ++c) s += x.at({b, c, h, w});
        CHECK(sc.at({b, 0, h, w}) == doctest::Approx(s).epsilon(1e-14));
      }
  double total = 0;
  for (size_t i = 0; i < x.size(); ++i) total += x.data()[i];
  CHECK(mean_all(x).item() ==
        doctest::Approx(total / double(x.size())).epsilon(1e-14));
}

TEST_CASE("mean_all accumulates in double even for float tensors") {
  // 2^20 values of 0.1f: a running float sum drifts by ~1e-4 relative;
  // double accumulation keeps the mean at float(0.1) almost exactly.
  auto x = Tensor<float>::full({1, 1, 1024, 1024}, 0.1f);
  float m = mean_all(x).item();
  CHECK(std::abs(double(m) - double(0.1f)) < 1e-8);
}

TEST_CASE("srgb_to_lab matches the scalar converter") {
  Rng rng(43);
  auto x = random_tensor<double>({1, 3, 4, 5}, rng, 0.0, 1.0);
  auto lab = srgb_to_lab(x);
  for (int h = 0; h < 4; ++h)
    for (int w = 0; w < 5; ++w) {
      double rgb[3], want[3];
      for (int c = 0; c < 3; ++c) rgb[c] = x.at({0, c, h, w});
      srgb_to_lab_scalar(rgb, want);
      for (int c = 0; c < 3; ++c)
        CHECK(lab.at({0, c, h, w}) == doctest::Approx(want[c]).epsilon(1e-12));
    }
}

TEST_CASE("srgb_to_lab anchors: white, black, mid gray") {
  auto x = Tensor<double>::from(
      {1, 3, 1, 3}, {1.0, 0.0, 0.5, 1.0, 0.0, 0.5, 1.0, 0.0, 0.5});
  auto lab = srgb_to_lab(x);
  // The published 7-digit sRGB matrix rows do not sum exactly to the D65
  // white point (row Y sums to 1.0000001), so neutral inputs carry a few
  // 1e-5 of residual chroma. Every standard implementation shares this.
  // white -> (100, 0, 0)
  CHECK(std::abs(lab.at({0, 0, 0, 0}) - 100.0) < 1e-4);
  CHECK(std::abs(lab.at({0, 1, 0, 0})) < 1e-4);
  CHECK(std::abs(lab.at({0, 2, 0, 0})) < 1e-4);
  // black -> (0, 0, 0)
  CHECK(std::abs(lab.at({0, 0, 0, 1})) < 1e-9);
  CHECK(std::abs(lab.at({0, 1, 0, 1})) < 1e-9);
  CHECK(std::abs(lab.at({0, 2, 0, 1})) < 1e-9);
  // mid gray (0.5, 0.5, 0.5) -> L* = 53.389, a = b = 0
  CHECK(std::abs(lab.at({0, 0, 0, 2}) - 53.3890) < 0.001);
  CHECK(std::abs(lab.at({0, 1, 0, 2})) < 1e-4);
  CHECK(std::abs(lab.at({0, 2, 0, 2})) < 1e-4);
}

TEST_CASE("stack_batch concatenates [C,H,W] items along a new batch axis") {
  Rng rng(47);
  std::vector<Tensor<float>> items;
  for (int i = 0; i < 3; ++i)
    items.push_back(random_tensor<float>({2, 4, 5}, rng));
  auto s = stack_batch(items);
  REQUIRE(s.shape() == Shape{3, 2, 4, 5});
  for (int b = 0; b < 3; ++b)
    for (int c = 0; c < 2; ++c)
      for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 5; ++w)
          CHECK(s.at({b, c, h, w}) == items[size_t(b)].at({c, h, w}));
}

// ---------------------------------------------------------------------------
// Gradient property suite: every differentiable op is verified against
// central finite differences in double precision across many seeds.
// ---------------------------------------------------------------------------

namespace {

using T64 = double;
constexpr double kGradTol = 1e-6;
constexpr T64 kFdStep = 1e-6;
constexpr size_t kMaxComps = 24;

void expect_grads_ok(const char* label,
                     const std::function<Tensor<T64>()>& fwd,
                     const std::vector<Tensor<T64>>& wrt, Tape<T64>& tape,
                     Rng& rng) {
  auto res = grad_check<T64>(fwd, wrt, tape, rng, kFdStep, kMaxComps);
  CAPTURE(label);
  CAPTURE(res.max_abs);
  CHECK(res.checked > 0);
  CHECK(res.max_rel < kGradTol);
}

}  // namespace

TEST_CASE("gradients: every op matches finite differences over 20 seeds") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    CAPTURE(seed);
    Tape<T64> tape;
    Rng rng(seed);

    auto var = [&](const Shape& s, double lo, double hi) {
      auto t = Tensor<T64>::variable(s, &tape);
      for (size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
      return t;
    };

    {
      auto x = var({1, 3, 6, 6}, -1, 1);
      auto w = var({4, 3, 3, 3}, -1, 1);
      auto b = var({4}, -1, 1);
      expect_grads_ok(
          "conv2d general", [&] { return conv2d(x, w, b, 1, 1, 1); },
          {x, w, b}, tape, rng);
      expect_grads_ok(
          "conv2d strided", [&] { return conv2d(x, w, b, 2, 1, 1); },
          {x, w, b}, tape, rng);
    }
    {
      auto x = var({2, 4, 5, 5}, -1, 1);
      auto w = var({6, 4, 1, 1}, -1, 1);
      auto b = var({6}, -1, 1);
      expect_grads_ok(
          "conv2d pointwise", [&] { return conv2d(x, w, b, 1, 0, 1); },
          {x, w, b}, tape, rng);
    }
    {
      auto x = var({1, 4, 6, 6}, -1, 1);
      auto w = var({4, 1, 3, 3}, -1, 1);
      auto b = var({4}, -1, 1);
      expect_grads_ok(
          "conv2d depthwise", [&] { return conv2d(x, w, b, 1, 1, 4); },
          {x, w, b}, tape, rng);
    }
    {
      auto x = var({1, 4, 4, 4}, -2, 2);
      expect_grads_ok("gelu", [&] { return gelu(x); }, {x}, tape, rng);
      expect_grads_ok("sigmoid", [&] { return sigmoid(x); }, {x}, tape, rng);
    }
    {
      auto x = var({2, 4, 3, 3}, -2, 2);
      auto g = var({4}, 0.5, 1.5);
      auto b = var({4}, -0.5, 0.5);
      expect_grads_ok(
          "layer_norm_channels",
          [&] { return layer_norm_channels(x, g, b, 1e-6); }, {x, g, b}, tape,
          rng);
    }
    {
      auto x = var({1, 2, 6, 6}, -1, 1);
      expect_grads_ok(
          "avg_pool2d", [&] { return avg_pool2d(x, 2, 2); }, {x}, tape, rng);
      expect_grads_ok(
          "global_avg_pool", [&] { return global_avg_pool(x); }, {x}, tape,
          rng);
    }
    {
      auto x = var({2, 3, 4, 4}, -1, 1);
      auto s = var({2, 3, 1, 1}, 0.3, 1.8);
      expect_grads_ok(
          "channel_scale", [&] { return channel_scale(x, s); }, {x, s}, tape,
          rng);
      auto ss = var({1, 3, 1, 1}, 0.3, 1.8);
      expect_grads_ok(
          "channel_scale shared", [&] { return channel_scale(x, ss); },
          {x, ss}, tape, rng);
    }
    {
      auto a = var({1, 2, 4, 4}, -1, 1);
      auto b = var({1, 2, 4, 4}, 0.5, 1.5);  // away from 0 for divide/abs
      expect_grads_ok("add", [&] { return add(a, b); }, {a, b}, tape, rng);
      expect_grads_ok("sub", [&] { return sub(a, b); }, {a, b}, tape, rng);
      expect_grads_ok("mul", [&] { return mul(a, b); }, {a, b}, tape, rng);
      expect_grads_ok(
          "divide", [&] { return divide(a, b); }, {a, b}, tape, rng);
      expect_grads_ok(
          "scalar_mul", [&] { return scalar_mul(a, 1.7); }, {a}, tape, rng);
      expect_grads_ok(
          "scalar_add", [&] { return scalar_add(a, -0.3); }, {a}, tape, rng);
      expect_grads_ok(
          "sqrt_shift", [&] { return sqrt_shift(b, 1e-4); }, {b}, tape, rng);
      expect_grads_ok(
          "abs_val", [&] { return abs_val(b); }, {b}, tape, rng);
      expect_grads_ok(
          "sum_channels", [&] { return sum_channels(a); }, {a}, tape, rng);
      expect_grads_ok(
          "mean_all", [&] { return mean_all(a); }, {a}, tape, rng);
    }
    {
      // Interior of (0,1) only: clamp01's gradient gate and the sRGB gamma
      // knee are non-smooth, so finite differences straddling them lie.
      auto x = var({1, 3, 3, 3}, 0.1, 0.9);
      expect_grads_ok("clamp01", [&] { return clamp01(x); }, {x}, tape, rng);
      expect_grads_ok(
          "srgb_to_lab", [&] { return srgb_to_lab(x); }, {x}, tape, rng);
    }
  }
}

TEST_CASE("gradients: composed pipeline matches finite differences") {
  // conv -> gelu -> layer_norm -> channel gate -> mean, the NAFNet block
  // skeleton, checked end to end.
  for (uint64_t seed : {3u, 17u, 99u}) {
    CAPTURE(seed);
    Tape<T64> tape;
    Rng rng(seed);
    auto fillv = [&](const Shape& s, double lo, double hi) {
      auto t = Tensor<T64>::variable(s, &tape);
      for (size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
      return t;
    };
    auto x = fillv({1, 3, 6, 6}, -1, 1);
    auto w1 = fillv({4, 3, 3, 3}, -0.5, 0.5);
    auto b1 = fillv({4}, -0.2, 0.2);
    auto g = fillv({4}, 0.8, 1.2);
    auto be = fillv({4}, -0.1, 0.1);
    auto ws = fillv({4, 4, 1, 1}, -0.5, 0.5);
    auto bs = fillv({4}, -0.2, 0.2);

    auto fwd = [&] {
      auto h = conv2d(x, w1, b1, 1, 1, 1);
      h = gelu(h);
      h = layer_norm_channels(h, g, be, 1e-6);
      auto s = sigmoid(conv2d(global_avg_pool(h), ws, bs, 1, 0, 1));
      h = channel_scale(h, s);
      return mean_all(h);
    };
    auto res = grad_check<T64>(fwd, {x, w1, b1, g, be, ws, bs}, tape, rng,
                               kFdStep, 16);
    CHECK(res.checked > 0);
    CHECK(res.max_rel < 1e-6);
  }
}

TEST_CASE("gradients: float composed pipeline stays within loose tolerance") {
  Tape<float> tape;
  Rng rng(5);
  auto fillv = [&](const Shape& s) {
    auto t = Tensor<float>::variable(s, &tape);
    for (size_t i = 0; i < t.size(); ++i)
      t.data()[i] = float(rng.uniform(-1, 1));
    return t;
  };
  auto x = fillv({1, 3, 5, 5});
  auto w = fillv({4, 3, 3, 3});
  auto b = fillv({4});
  auto fwd = [&] { return mean_all(gelu(conv2d(x, w, b, 1, 1, 1))); };
  auto res = grad_check<float>(fwd, {x, w, b}, tape, rng, 1e-2f, 24);
  CHECK(res.checked > 0);
  CHECK(res.max_rel < 1e-3);
}

TEST_CASE("gradients accumulate additively across two uses of one tensor") {
  Tape<double> tape;
  auto x = Tensor<double>::variable({1, 1, 2, 2}, &tape);
  x.fill(0.5);
  auto y = add(mul(x, x), x);  // d/dx = 2x + 1 = 2
  auto loss = mean_all(y);
  backward(loss);
  for (int i = 0; i < 4; ++i)
    CHECK(x.grad_data()[i] == doctest::Approx(2.0 / 4.0).epsilon(1e-12));
}
