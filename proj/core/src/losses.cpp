// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#include "ctxisp/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ctxisp {

namespace {

template <typename T>
Tensor<T> gaussian_window(int channels) {
  constexpr int K = 11;
  constexpr double sigma = 1.5;
  double w[K];
  double sum = 0;
  for (int i = 0; i < K; ++i) {
    double d = i - (K - 1) / 2.0;
    w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += w[i];
  }
  for (int i = 0; i < K; ++i) w[i] /= sum;
  Tensor<T> win = Tensor<T>::uninit({channels, 1, K, K});
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < K; ++y)
      for (int x = 0; x < K; ++x)
        win.data()[(size_t(c) * K + y) * K + x] = T(w[y] * w[x]);
  return win;
}

template <typename T>
Tensor<T> sobel_kernel(int channels, bool horizontal) {
  static constexpr double kx[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
  static constexpr double ky[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
  const double* k = horizontal ? kx : ky;
  Tensor<T> out = Tensor<T>::uninit({channels, 1, 3, 3});
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < 9; ++i) out.data()[size_t(c) * 9 + i] = T(k[i]);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  Tensor<T> d = sub(pred, target);
  return mean_all(mul(d, d));
}

template <typename T>
Tensor<T> ssim_index(const Tensor<T>& pred, const Tensor<T>& target) {
  CTXISP_CHECK(pred.defined() && pred.rank() == 4,
               "ssim_index: inputs must be [B,C,H,W]");
  CTXISP_CHECK(pred.shape() == target.shape(), "ssim_index: shape mismatch");
  CTXISP_CHECK(pred.dim(2) >= 11 && pred.dim(3) >= 11,
               "ssim_index: image smaller than the 11x11 window");
  const int C = pred.dim(1);
  const T c1 = T(1e-4), c2 = T(9e-4);  // (K1*L)^2, (K2*L)^2 with L = 1
  Tensor<T> win = gaussian_window<T>(C);
  Tensor<T> none;
  auto smooth = [&](const Tensor<T>& x) {
    return conv2d(x, win, none, 1, 0, C);
  };
  Tensor<T> mu_p = smooth(pred);
  Tensor<T> mu_t = smooth(target);
  Tensor<T> mu_pp = mul(mu_p, mu_p);
  Tensor<T> mu_tt = mul(mu_t, mu_t);
  Tensor<T> mu_pt = mul(mu_p, mu_t);
  Tensor<T> var_p = sub(smooth(mul(pred, pred)), mu_pp);
  Tensor<T> var_t = sub(smooth(mul(target, target)), mu_tt);
  Tensor<T> cov = sub(smooth(mul(pred, target)), mu_pt);
  Tensor<T> num = mul(scalar_add(scalar_mul(mu_pt, T(2)), c1),
                      scalar_add(scalar_mul(cov, T(2)), c2));
  Tensor<T> den = mul(scalar_add(add(mu_pp, mu_tt), c1),
                      scalar_add(add(var_p, var_t), c2));
  return mean_all(divide(num, den));
}

template <typename T>
Tensor<T> gradient_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  CTXISP_CHECK(pred.defined() && pred.rank() == 4,
               "gradient_loss: inputs must be [B,C,H,W]");
  CTXISP_CHECK(pred.shape() == target.shape(),
               "gradient_loss: shape mismatch");
  const int C = pred.dim(1);
  Tensor<T> kx = sobel_kernel<T>(C, true);
  Tensor<T> ky = sobel_kernel<T>(C, false);
  Tensor<T> none;
  auto term = [&](const Tensor<T>& k) {
    Tensor<T> gp = conv2d(pred, k, none, 1, 0, C);
    Tensor<T> gt = conv2d(target, k, none, 1, 0, C);
    return mean_all(abs_val(sub(gp, gt)));
  };
  return add(term(kx), term(ky));
}

template <typename T>
Tensor<T> color_loss_lab(const Tensor<T>& pred, const Tensor<T>& lab_target) {
  Tensor<T> lab_p = srgb_to_lab(clamp01(pred));
  Tensor<T> d = sub(lab_p, lab_target);
  Tensor<T> dist = sqrt_shift(sum_channels(mul(d, d)), T(1e-12));
  return mean_all(dist);
}

template <typename T>
Tensor<T> color_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  return color_loss_lab(pred, srgb_to_lab(clamp01(target)));
}

template <typename T>
LossBreakdown<T> total_loss(const IspOutput<T>& out, const Tensor<T>& target,
                            const LossWeights& w,
                            const Tensor<T>& lab_target) {
  CTXISP_CHECK(out.rgb.defined() && out.y_c.defined(),
               "total_loss: undefined model output");
  LossBreakdown<T> lb;
  Tensor<T> total;
  auto accumulate = [&total](const Tensor<T>& term, double weight) {
    Tensor<T> scaled = scalar_mul(term, T(weight));
    total = total.defined() ? add(total, scaled) : scaled;
  };
  Tensor<T> lab_t;
  auto target_lab = [&]() {
    if (!lab_t.defined())
      lab_t = lab_target.defined() ? lab_target
                                   : srgb_to_lab(clamp01(target));
    return lab_t;
  };
  if (w.mse != 0) {
    Tensor<T> term = mse_loss(out.rgb, target);
    lb.mse = double(term.item());
    accumulate(term, w.mse);
  }
  if (w.ssim != 0) {
    Tensor<T> term =
        scalar_add(scalar_mul(ssim_index(out.rgb, target), T(-1)), T(1));
    lb.ssim = double(term.item());
    accumulate(term, w.ssim);
  }
  if (w.grad != 0) {
    Tensor<T> term = gradient_loss(out.rgb, target);
    lb.grad = double(term.item());
    accumulate(term, w.grad);
  }
  if (w.color_final != 0) {
    Tensor<T> term = color_loss_lab(out.rgb, target_lab());
    lb.color_final = double(term.item());
    accumulate(term, w.color_final);
  }
  if (w.color_cmod != 0) {
    Tensor<T> term = color_loss_lab(out.y_c, target_lab());
    lb.color_cmod = double(term.item());
    accumulate(term, w.color_cmod);
  }
  CTXISP_CHECK(total.defined(), "total_loss: all weights are zero");
  lb.total = total;
  return lb;
}

void srgb_to_lab_scalar(const double rgb[3], double lab[3]) {
  constexpr double M[9] = {0.4124564, 0.3575761, 0.1804375,
                           0.2126729, 0.7151522, 0.0721750,
                           0.0193339, 0.1191920, 0.9503041};
  constexpr double wn[3] = {0.95047, 1.0, 1.08883};
  double lin[3];
  for (int c = 0; c < 3; ++c) {
    double u = std::clamp(rgb[c], 0.0, 1.0);
    lin[c] = u <= 0.04045 ? u / 12.92 : std::pow((u + 0.055) / 1.055, 2.4);
  }
  double f[3];
  for (int c = 0; c < 3; ++c) {
    double t =
        (M[c * 3] * lin[0] + M[c * 3 + 1] * lin[1] + M[c * 3 + 2] * lin[2]) /
        wn[c];
    f[c] = t > 216.0 / 24389.0 ? std::cbrt(t)
                               : (841.0 / 108.0) * t + 4.0 / 29.0;
  }
  lab[0] = 116.0 * f[1] - 16.0;
  lab[1] = 500.0 * (f[0] - f[1]);
  lab[2] = 200.0 * (f[1] - f[2]);
}

double ciede2000(const double lab1[3], const double lab2[3]) {
  constexpr double deg = std::numbers::pi / 180.0;
  const double L1 = lab1[0], a1 = lab1[1], b1 = lab1[2];
  const double L2 = lab2[0], a2 = lab2[1], b2 = lab2[2];
  const double C1 = std::hypot(a1, b1), C2 = std::hypot(a2, b2);
  const double Cbar = 0.5 * (C1 + C2);
  const double Cbar7 = std::pow(Cbar, 7.0);
  constexpr double p25_7 = 6103515625.0;  // 25^7
  const double G = 0.5 * (1.0 - std::sqrt(Cbar7 / (Cbar7 + p25_7)));
  const double a1p = (1.0 + G) * a1, a2p = (1.0 + G) * a2;
  const double C1p = std::hypot(a1p, b1), C2p = std::hypot(a2p, b2);
  auto hue = [deg](double a, double b) {
    if (a == 0.0 && b == 0.0) return 0.0;
    double h = std::atan2(b, a) / deg;
    return h < 0.0 ? h + 360.0 : h;
  };
  const double h1p = hue(a1p, b1), h2p = hue(a2p, b2);

  const double dLp = L2 - L1;
  const double dCp = C2p - C1p;
  double dhp = 0.0;
  if (C1p * C2p != 0.0) {
    dhp = h2p - h1p;
    if (dhp > 180.0)
      dhp -= 360.0;
    else if (dhp < -180.0)
      dhp += 360.0;
  }
  const double dHp = 2.0 * std::sqrt(C1p * C2p) * std::sin(0.5 * dhp * deg);

  const double Lbp = 0.5 * (L1 + L2);
  const double Cbp = 0.5 * (C1p + C2p);
  double hbp = h1p + h2p;
  if (C1p * C2p != 0.0) {
    if (std::abs(h1p - h2p) <= 180.0)
      hbp = 0.5 * (h1p + h2p);
    else if (h1p + h2p < 360.0)
      hbp = 0.5 * (h1p + h2p + 360.0);
    else
      hbp = 0.5 * (h1p + h2p - 360.0);
  }
  const double Tt = 1.0 - 0.17 * std::cos((hbp - 30.0) * deg) +
                    0.24 * std::cos(2.0 * hbp * deg) +
                    0.32 * std::cos((3.0 * hbp + 6.0) * deg) -
                    0.20 * std::cos((4.0 * hbp - 63.0) * deg);
  const double dtheta = 30.0 * std::exp(-((hbp - 275.0) / 25.0) *
                                        ((hbp - 275.0) / 25.0));
  const double Cbp7 = std::pow(Cbp, 7.0);
  const double Rc = 2.0 * std::sqrt(Cbp7 / (Cbp7 + p25_7));
  const double Sl = 1.0 + 0.015 * (Lbp - 50.0) * (Lbp - 50.0) /
                              std::sqrt(20.0 + (Lbp - 50.0) * (Lbp - 50.0));
  const double Sc = 1.0 + 0.045 * Cbp;
  const double Sh = 1.0 + 0.015 * Cbp * Tt;
  const double Rt = -std::sin(2.0 * dtheta * deg) * Rc;
  const double tl = dLp / Sl, tc = dCp / Sc, th = dHp / Sh;
  return std::sqrt(tl * tl + tc * tc + th * th + Rt * tc * th);
}

namespace {

template <typename F>
void for_each_pixel_lab(const Tensor<float>& pred, const Tensor<float>& target,
                        F&& f) {
  CTXISP_CHECK(pred.defined() && pred.rank() == 3 && pred.dim(0) == 3,
               "metrics: images must be [3,H,W]");
  CTXISP_CHECK(pred.shape() == target.shape(), "metrics: shape mismatch");
  const size_t hw = size_t(pred.dim(1)) * pred.dim(2);
  const float* p = pred.data();
  const float* t = target.data();
  for (size_t i = 0; i < hw; ++i) {
    double rgb_p[3] = {double(p[i]), double(p[i + hw]), double(p[i + 2 * hw])};
    double rgb_t[3] = {double(t[i]), double(t[i + hw]), double(t[i + 2 * hw])};
    double lab_p[3], lab_t[3];
    srgb_to_lab_scalar(rgb_p, lab_p);
    srgb_to_lab_scalar(rgb_t, lab_t);
    f(lab_p, lab_t);
  }
}

}  // namespace

double psnr_metric(const Tensor<float>& pred, const Tensor<float>& target,
                   double peak) {
  CTXISP_CHECK(pred.defined() && pred.shape() == target.shape(),
               "psnr_metric: shape mismatch");
  CTXISP_CHECK(peak > 0, "psnr_metric: peak must be positive");
  const float* p = pred.data();
  const float* t = target.data();
  double se = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    double pc = std::clamp(double(p[i]), 0.0, 1.0);
    double d = pc - double(t[i]);
    se += d * d;
  }
  double mse = se / double(pred.size());
  if (mse <= 1e-10 * peak * peak) return 100.0;
  return std::min(100.0, 10.0 * std::log10(peak * peak / mse));
}

double ssim_metric(const Tensor<float>& pred, const Tensor<float>& target) {
  Tensor<float> p = stack_batch<float>({pred});
  Tensor<float> t = stack_batch<float>({target});
  // clamp01 on an untaped tensor does not record.
  return double(ssim_index(clamp01(p), t).item());
}

double mean_de76_metric(const Tensor<float>& pred,
                        const Tensor<float>& target) {
  double sum = 0;
  size_t n = 0;
  for_each_pixel_lab(pred, target, [&](const double* lp, const double* lt) {
    double d0 = lp[0] - lt[0], d1 = lp[1] - lt[1], d2 = lp[2] - lt[2];
    sum += std::sqrt(d0 * d0 + d1 * d1 + d2 * d2);
    ++n;
  });
  return sum / double(n);
}

double mean_de2000_metric(const Tensor<float>& pred,
                          const Tensor<float>& target) {
  double sum = 0;
  size_t n = 0;
  for_each_pixel_lab(pred, target, [&](const double* lp, const double* lt) {
    sum += ciede2000(lp, lt);
    ++n;
  });
  return sum / double(n);
}

#define CTXISP_INSTANTIATE(T)                                               \
  template Tensor<T> mse_loss<T>(const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> ssim_index<T>(const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> gradient_loss<T>(const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> color_loss<T>(const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> color_loss_lab<T>(const Tensor<T>&, const Tensor<T>&); \
  template LossBreakdown<T> total_loss<T>(const IspOutput<T>&,              \
                                          const Tensor<T>&,                 \
                                          const LossWeights&,               \
                                          const Tensor<T>&);

CTXISP_INSTANTIATE(float)
CTXISP_INSTANTIATE(double)
#undef CTXISP_INSTANTIATE

}  // namespace ctxisp
