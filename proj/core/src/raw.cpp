// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#include "ctxisp/raw.hpp"

#include <algorithm>
#include <cmath>

namespace ctxisp {

void BayerImage::validate() const {
  CTXISP_CHECK(width > 0 && height > 0, "BayerImage: empty image");
  CTXISP_CHECK(width % 2 == 0 && height % 2 == 0,
               "BayerImage: dimensions must be even, got ", width, "x",
               height);
  CTXISP_CHECK(samples.size() == size_t(width) * height,
               "BayerImage: sample count ", samples.size(),
               " does not match ", width, "x", height);
  for (int i = 0; i < 4; ++i)
    CTXISP_CHECK(black_level[i] >= 0 && black_level[i] < white_level,
                 "BayerImage: black level ", black_level[i],
                 " must be below white level ", white_level);
}

Tensor<float> normalize_mosaic(const BayerImage& img) {
  img.validate();
  Tensor<float> out = Tensor<float>::uninit({img.height, img.width});
  float* o = out.data();
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      int site = (y & 1) * 2 + (x & 1);
      float black = float(img.black_level[size_t(site)]);
      float v = (float(img.samples[size_t(y) * img.width + x]) - black) /
                (float(img.white_level) - black);
      o[size_t(y) * img.width + x] = std::clamp(v, 0.0f, 1.0f);
    }
  }
  return out;
}

Tensor<float> pack_rggb(const Tensor<float>& mosaic) {
  CTXISP_CHECK(mosaic.defined() && mosaic.rank() == 2,
               "pack_rggb: mosaic must be [H,W]");
  const int H = mosaic.dim(0), W = mosaic.dim(1);
  CTXISP_CHECK(H % 2 == 0 && W % 2 == 0,
               "pack_rggb: dimensions must be even");
  const int h2 = H / 2, w2 = W / 2;
  Tensor<float> out = Tensor<float>::uninit({4, h2, w2});
  const float* m = mosaic.data();
  for (int c = 0; c < 4; ++c) {
    int oy = c / 2, ox = c % 2;
    float* oc = out.data() + size_t(c) * h2 * w2;
    for (int y = 0; y < h2; ++y)
      for (int x = 0; x < w2; ++x)
        oc[size_t(y) * w2 + x] = m[size_t(2 * y + oy) * W + 2 * x + ox];
  }
  return out;
}

Tensor<float> pack_rggb(const BayerImage& img) {
  return pack_rggb(normalize_mosaic(img));
}

Tensor<float> unpack_rggb(const Tensor<float>& packed) {
  CTXISP_CHECK(packed.defined() && packed.rank() == 3 && packed.dim(0) == 4,
               "unpack_rggb: packed image must be [4,H,W]");
  const int h2 = packed.dim(1), w2 = packed.dim(2);
  const int H = 2 * h2, W = 2 * w2;
  Tensor<float> out = Tensor<float>::uninit({H, W});
  float* m = out.data();
  for (int c = 0; c < 4; ++c) {
    int oy = c / 2, ox = c % 2;
    const float* pc = packed.data() + size_t(c) * h2 * w2;
    for (int y = 0; y < h2; ++y)
      for (int x = 0; x < w2; ++x)
        m[size_t(2 * y + oy) * W + 2 * x + ox] = pc[size_t(y) * w2 + x];
  }
  return out;
}

namespace {

inline int reflect_clamp(int i, int n) { return std::clamp(i, 0, n - 1); }

}  // namespace

Tensor<float> demosaic_bilinear(const Tensor<float>& mosaic) {
  CTXISP_CHECK(mosaic.defined() && mosaic.rank() == 2,
               "demosaic_bilinear: mosaic must be [H,W]");
  const int H = mosaic.dim(0), W = mosaic.dim(1);
  CTXISP_CHECK(H % 2 == 0 && W % 2 == 0,
               "demosaic_bilinear: dimensions must be even");
  const float* m = mosaic.data();
  auto at = [&](int y, int x) {
    return m[size_t(reflect_clamp(y, H)) * W + reflect_clamp(x, W)];
  };
  Tensor<float> out = Tensor<float>::uninit({3, H, W});
  float* r = out.data();
  float* g = r + size_t(H) * W;
  float* b = g + size_t(H) * W;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      size_t i = size_t(y) * W + x;
      float v = m[i];
      bool ey = (y & 1) == 0, ex = (x & 1) == 0;
      float cross =
          0.25f * (at(y - 1, x) + at(y + 1, x) + at(y, x - 1) + at(y, x + 1));
      float diag = 0.25f * (at(y - 1, x - 1) + at(y - 1, x + 1) +
                            at(y + 1, x - 1) + at(y + 1, x + 1));
      float horiz = 0.5f * (at(y, x - 1) + at(y, x + 1));
      float vert = 0.5f * (at(y - 1, x) + at(y + 1, x));
      if (ey && ex) {  // R site
        r[i] = v;
        g[i] = cross;
        b[i] = diag;
      } else if (ey && !ex) {  // G1 site: R horizontal, B vertical
        r[i] = horiz;
        g[i] = v;
        b[i] = vert;
      } else if (!ey && ex) {  // G2 site: R vertical, B horizontal
        r[i] = vert;
        g[i] = v;
        b[i] = horiz;
      } else {  // B site
        r[i] = diag;
        g[i] = cross;
        b[i] = v;
      }
    }
  }
  return out;
}

Tensor<float> demosaic_bilinear(const BayerImage& img) {
  return demosaic_bilinear(normalize_mosaic(img));
}

Tensor<float> make_guide(const Tensor<float>& packed, int gh, int gw) {
  CTXISP_CHECK(packed.defined() && packed.rank() == 3 && packed.dim(0) == 4,
               "make_guide: packed image must be [4,H,W]");
  const int H = packed.dim(1), W = packed.dim(2);
  CTXISP_CHECK(gh >= 1 && gw >= 1, "make_guide: guide dims must be positive");
  CTXISP_CHECK(gh <= H && gw <= W, "make_guide: guide ", gh, "x", gw,
               " exceeds packed image ", H, "x", W,
               " (the guide only downsamples)");
  Tensor<float> out = Tensor<float>::uninit({4, gh, gw});

  // Exact area average: output cell o integrates the source over
  // [o*n/g, (o+1)*n/g) with fractional edge weights.
  auto cell_weights = [](int o, int n, int g, int& i0, int& i1,
                         std::vector<double>& w) {
    double lo = double(o) * n / g, hi = double(o + 1) * n / g;
    i0 = int(std::floor(lo));
    i1 = std::min(n - 1, int(std::ceil(hi)) - 1);
    w.clear();
    for (int i = i0; i <= i1; ++i) {
      double a = std::max(lo, double(i));
      double b = std::min(hi, double(i + 1));
      w.push_back(std::max(0.0, b - a));
    }
  };

  std::vector<double> wy, wx;
  for (int oy = 0; oy < gh; ++oy) {
    int y0, y1;
    cell_weights(oy, H, gh, y0, y1, wy);
    for (int ox = 0; ox < gw; ++ox) {
      int x0, x1;
      cell_weights(ox, W, gw, x0, x1, wx);
      double area = 0;
      for (double a : wy)
        for (double b : wx) area += a * b;
      for (int c = 0; c < 4; ++c) {
        const float* pc = packed.data() + size_t(c) * H * W;
        double s = 0;
        for (int y = y0; y <= y1; ++y)
          for (int x = x0; x <= x1; ++x)
            s += wy[size_t(y - y0)] * wx[size_t(x - x0)] *
                 double(pc[size_t(y) * W + x]);
        out.data()[(size_t(c) * gh + oy) * gw + ox] = float(s / area);
      }
    }
  }
  return out;
}

Tensor<float> make_guide(const Tensor<float>& packed, int guide_size) {
  return make_guide(packed, guide_size, guide_size);
}

BayerImage crop_bayer(const BayerImage& img, int x0, int y0, int w, int h) {
  img.validate();
  CTXISP_CHECK(x0 % 2 == 0 && y0 % 2 == 0,
               "crop_bayer: origin must be even to keep the RGGB phase");
  CTXISP_CHECK(w > 0 && h > 0 && w % 2 == 0 && h % 2 == 0,
               "crop_bayer: size must be positive and even");
  CTXISP_CHECK(x0 >= 0 && y0 >= 0 && x0 + w <= img.width &&
                   y0 + h <= img.height,
               "crop_bayer: window [", x0, ",", y0, ",", w, ",", h,
               "] exceeds image ", img.width, "x", img.height);
  BayerImage out;
  out.width = w;
  out.height = h;
  out.black_level = img.black_level;
  out.white_level = img.white_level;
  out.samples.resize(size_t(w) * h);
  for (int y = 0; y < h; ++y)
    std::copy_n(img.samples.begin() + size_t(y0 + y) * img.width + x0, w,
                out.samples.begin() + size_t(y) * w);
  return out;
}

}  // namespace ctxisp
