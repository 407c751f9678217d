// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "ctxisp/rng.hpp"
#include "ctxisp/tensor.hpp"

namespace ctxisp {

// All image tensors are [B, C, H, W] row-major. Every op allocates its
// output; inputs are never modified. When any input is a tape-attached
// tensor with recording enabled, the op pushes a backward closure that
// accumulates into the .grad buffers of grad-requiring inputs.

// Cross-correlation with zero padding. w is [Cout, Cin/groups, kh, kw];
// bias is optional ([Cout]) and may be an undefined Tensor.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride = 1, int padding = 0, int groups = 1);

// x * Phi(x), exact-erf form of GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

// Normalizes across C independently at every (b, h, w); gamma/beta are [C].
template <typename T>
Tensor<T> layer_norm_channels(const Tensor<T>& x, const Tensor<T>& gamma,
                              const Tensor<T>& beta, T eps = T(1e-6));

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int window, int stride);

// [B, C, H, W] -> [B, C, 1, 1]
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

// out[b,c,h,w] = x[b,c,h,w] * s[b,c,0,0]; s is [B, C, 1, 1].
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& x, T c);
template <typename T>
Tensor<T> scalar_add(const Tensor<T>& x, T c);

// sqrt(x + eps); eps keeps the derivative finite at x = 0.
template <typename T>
Tensor<T> sqrt_shift(const Tensor<T>& x, T eps);

template <typename T>
Tensor<T> abs_val(const Tensor<T>& x);

// [B, C, H, W] -> [B, 1, H, W]
template <typename T>
Tensor<T> sum_channels(const Tensor<T>& x);

// Mean over all elements -> scalar [1].
template <typename T>
Tensor<T> mean_all(const Tensor<T>& x);

// Clamp to [0, 1]; gradient passes only strictly inside the interval.
template <typename T>
Tensor<T> clamp01(const Tensor<T>& x);

// Gamma-encoded sRGB [B, 3, H, W] in [0, 1] -> CIE Lab (D65, 2 degree
// observer), channels (L, a, b). Differentiable via the analytic Jacobian.
template <typename T>
Tensor<T> srgb_to_lab(const Tensor<T>& x);

// Stacks same-shaped [C, H, W] tensors into [B, C, H, W]. Data utility, not
// differentiable.
template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items);

// Central-finite-difference verification of tape gradients. `forward`
// rebuilds the graph from the `wrt` leaves on each call; the output is
// reduced to a scalar with fixed random weights so symmetric errors cannot
// cancel. Relative error uses |a - f| / (|a| + |f| + 1e-6).
template <typename T>
struct GradCheckResult {
  double max_rel = 0;
  double max_abs = 0;
  size_t checked = 0;
};

template <typename T>
GradCheckResult<T> grad_check(const std::function<Tensor<T>()>& forward,
                              const std::vector<Tensor<T>>& wrt, Tape<T>& tape,
                              Rng& rng, T fd_step,
                              size_t max_components_per_input = size_t(-1));

}  // namespace ctxisp
