// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ctxisp/model.hpp"
#include "ctxisp/ops.hpp"

namespace ctxisp {

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

// Mean SSIM over valid 11x11 windows, Gaussian weighting (sigma 1.5),
// K1 = 0.01, K2 = 0.03, dynamic range 1. Differentiable; identical inputs
// yield exactly 1.
template <typename T>
Tensor<T> ssim_index(const Tensor<T>& pred, const Tensor<T>& target);

// L1 distance between Sobel responses of pred and target (both axes),
// a cheap stand-in for a perceptual feature-gradient term.
template <typename T>
Tensor<T> gradient_loss(const Tensor<T>& pred, const Tensor<T>& target);

// Mean per-pixel Euclidean Lab distance. Inputs are clamped to [0,1]
// before conversion. lab_target, when defined, is the precomputed Lab image
// of the (fixed) target and skips one conversion per call.
template <typename T>
Tensor<T> color_loss(const Tensor<T>& pred, const Tensor<T>& target);
template <typename T>
Tensor<T> color_loss_lab(const Tensor<T>& pred, const Tensor<T>& lab_target);

struct LossWeights {
  double mse = 1.0;
  double ssim = 0.1;
  double grad = 0.05;
  double color_final = 0.5;
  double color_cmod = 1.0;  // color supervision on the color-module output
};

template <typename T>
struct LossBreakdown {
  Tensor<T> total;  // taped scalar
  double mse = 0, ssim = 0, grad = 0, color_final = 0, color_cmod = 0;
};

// Weighted sum; terms with zero weight are skipped entirely (no graph
// built). lab_target is optional (see color_loss_lab).
template <typename T>
LossBreakdown<T> total_loss(const IspOutput<T>& out, const Tensor<T>& target,
                            const LossWeights& w,
                            const Tensor<T>& lab_target = {});

// Evaluation metrics on single images [3,H,W] in [0,1] (pred is clamped
// internally; target is assumed in range). Plain doubles, no tape.
double psnr_metric(const Tensor<float>& pred, const Tensor<float>& target,
                   double peak = 1.0);
double ssim_metric(const Tensor<float>& pred, const Tensor<float>& target);
double mean_de76_metric(const Tensor<float>& pred,
                        const Tensor<float>& target);
double mean_de2000_metric(const Tensor<float>& pred,
                          const Tensor<float>& target);

// CIEDE2000 for one Lab pair (kL = kC = kH = 1).
double ciede2000(const double lab1[3], const double lab2[3]);

// Scalar sRGB -> Lab used by the metrics (gamma-encoded input in [0,1]).
void srgb_to_lab_scalar(const double rgb[3], double lab[3]);

}  // namespace ctxisp
