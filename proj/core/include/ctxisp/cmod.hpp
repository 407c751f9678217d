// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>

#include "ctxisp/ops.hpp"
#include "ctxisp/rng.hpp"
#include "ctxisp/tensor.hpp"

namespace ctxisp {

struct ModelConfig {
  int mod_dim = 64;    // modification-space dimensionality
  int width = 32;      // reconstruction feature width C
  int num_blocks = 3;
  int guide_size = 128;
  int proj_width = 32;  // hidden width of the in/out projections
  int enc_width1 = 16;
  int enc_width2 = 32;

  void validate() const;
  // Smallest guide the encoder accepts (valid-padding conv stack).
  static int min_guide_size();
};

template <typename T>
struct ConvLayer {
  Tensor<T> w, b;
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

template <typename T>
Tensor<T> apply_conv(const ConvLayer<T>& l, const Tensor<T>& x) {
  return conv2d(x, l.w, l.b, l.stride, l.padding, l.groups);
}

namespace detail {
// Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) weights, zero bias.
template <typename T>
ConvLayer<T> make_conv(int cout, int cin, int kh, int kw, int stride, int pad,
                       int groups, Rng& rng, Tape<T>* tape);
}  // namespace detail

// Color module: pixels are lifted into a modification space by 1x1
// projections, scaled channel-wise by a per-image modification vector
// decoded from the global guide image, and projected back to RGB.
template <typename T>
struct CModParams {
  ConvLayer<T> in1, in2;            // 1x1 3->pw, GELU, 1x1 pw->k
  ConvLayer<T> enc1, enc2, enc3;    // guide encoder (valid padding)
  ConvLayer<T> out1, out2;          // 1x1 k->pw, GELU, 1x1 pw->3
};

template <typename T>
CModParams<T> init_cmod(const ModelConfig& cfg, Rng& rng, Tape<T>* tape);

// [B,3,H,W] -> [B,k,H,W]
template <typename T>
Tensor<T> project_in(const CModParams<T>& p, const Tensor<T>& x);

// Guide [B,4,gs,gs] -> modification vector [B,k,1,1].
template <typename T>
Tensor<T> encode_guide(const CModParams<T>& p, const Tensor<T>& guide);

// Channel-wise product with the modification vector.
template <typename T>
Tensor<T> apply_modification(const Tensor<T>& xm, const Tensor<T>& mv) {
  return channel_scale(xm, mv);
}

// [B,k,H,W] -> [B,3,H,W]
template <typename T>
Tensor<T> project_out(const CModParams<T>& p, const Tensor<T>& xmv);

// Full module: project_out(project_in(x) * encode_guide(guide)).
template <typename T>
Tensor<T> cmod_forward(const CModParams<T>& p, const Tensor<T>& x,
                       const Tensor<T>& guide);

template <typename T>
void visit_cmod(CModParams<T>& p, const std::string& prefix,
                const std::function<void(const std::string&, Tensor<T>&)>& f);

}  // namespace ctxisp
