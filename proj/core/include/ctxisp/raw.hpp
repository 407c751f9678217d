// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ctxisp/tensor.hpp"

namespace ctxisp {

// Single-plane Bayer mosaic, RGGB phase: (0,0)=R, (0,1)=G1, (1,0)=G2,
// (1,1)=B. Dimensions are even. Sample values are raw counts in
// [0, white_level]; black levels are per RGGB site.
struct BayerImage {
  int width = 0;
  int height = 0;
  std::vector<uint16_t> samples;
  std::array<int, 4> black_level = {64, 64, 64, 64};
  int white_level = 1023;

  void validate() const;
};

// (sample - black) / (white - black), clamped to [0,1]. Returns [H, W].
Tensor<float> normalize_mosaic(const BayerImage& img);

// Half-resolution channel packing of a normalized mosaic: [4, H/2, W/2] in
// RGGB order.
Tensor<float> pack_rggb(const Tensor<float>& mosaic);
Tensor<float> pack_rggb(const BayerImage& img);

// Inverse of pack_rggb: [4, H/2, W/2] -> [H, W].
Tensor<float> unpack_rggb(const Tensor<float>& packed);

// Bilinear demosaic with replicated borders. Returns [3, H, W] in [0,1].
Tensor<float> demosaic_bilinear(const Tensor<float>& mosaic);
Tensor<float> demosaic_bilinear(const BayerImage& img);

// Band-separated area downscale of a packed image to [4, gh, gw]. The
// guide never upsamples: gh/gw must not exceed the packed dimensions.
Tensor<float> make_guide(const Tensor<float>& packed, int gh, int gw);
Tensor<float> make_guide(const Tensor<float>& packed, int guide_size);

// Crop a window from a mosaic. x0/y0 must be even so the RGGB phase is
// preserved; the window must lie fully inside the image.
BayerImage crop_bayer(const BayerImage& img, int x0, int y0, int w, int h);

}  // namespace ctxisp
