// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#include "ctxisp/model.hpp"

#include <cstring>

namespace ctxisp {

namespace {

int ca_reduced_width(const ModelConfig& cfg) {
  int c2 = 2 * cfg.width;
  return c2 / 4 > 0 ? c2 / 4 : 1;
}

}  // namespace

template <typename T>
IspParams<T> init_isp(const ModelConfig& cfg, uint64_t seed, Tape<T>* tape) {
  cfg.validate();
  Rng rng(seed);
  IspParams<T> p;
  p.cfg = cfg;
  p.cmod = init_cmod<T>(cfg, rng, tape);
  const int C = cfg.width, C2 = 2 * cfg.width, CR = ca_reduced_width(cfg);
  p.head = detail::make_conv<T>(C, 3, 3, 3, 1, 1, 1, rng, tape);
  p.blocks.resize(size_t(cfg.num_blocks));
  for (auto& blk : p.blocks) {
    blk.ln1.gamma = Tensor<T>::variable({C}, tape);
    blk.ln1.gamma.fill(T(1));
    blk.ln1.beta = Tensor<T>::variable({C}, tape);
    blk.expand = detail::make_conv<T>(C2, C, 1, 1, 1, 0, 1, rng, tape);
    blk.dw = detail::make_conv<T>(C2, C2, 3, 3, 1, 1, C2, rng, tape);
    blk.ca_reduce = detail::make_conv<T>(CR, C2, 1, 1, 1, 0, 1, rng, tape);
    blk.ca_expand = detail::make_conv<T>(C2, CR, 1, 1, 1, 0, 1, rng, tape);
    blk.project = detail::make_conv<T>(C, C2, 1, 1, 1, 0, 1, rng, tape);
    blk.ln2.gamma = Tensor<T>::variable({C}, tape);
    blk.ln2.gamma.fill(T(1));
    blk.ln2.beta = Tensor<T>::variable({C}, tape);
    blk.ffn1 = detail::make_conv<T>(C2, C, 1, 1, 1, 0, 1, rng, tape);
    blk.ffn2 = detail::make_conv<T>(C, C2, 1, 1, 1, 0, 1, rng, tape);
    blk.alpha = Tensor<T>::variable({1, C, 1, 1}, tape);
    blk.beta = Tensor<T>::variable({1, C, 1, 1}, tape);
  }
  p.tail = detail::make_conv<T>(3, C, 3, 3, 1, 1, 1, rng, tape);
  return p;
}

template <typename T>
Tensor<T> block_forward(const BlockParams<T>& blk, const Tensor<T>& x) {
  Tensor<T> t = layer_norm_channels(x, blk.ln1.gamma, blk.ln1.beta);
  t = apply_conv(blk.expand, t);
  t = apply_conv(blk.dw, t);
  t = gelu(t);
  Tensor<T> gate = sigmoid(apply_conv(
      blk.ca_expand, gelu(apply_conv(blk.ca_reduce, global_avg_pool(t)))));
  t = channel_scale(t, gate);
  t = apply_conv(blk.project, t);
  Tensor<T> x1 = add(x, channel_scale(t, blk.alpha));
  Tensor<T> u = layer_norm_channels(x1, blk.ln2.gamma, blk.ln2.beta);
  u = apply_conv(blk.ffn2, gelu(apply_conv(blk.ffn1, u)));
  return add(x1, channel_scale(u, blk.beta));
}

template <typename T>
Tensor<T> reconstruct(const IspParams<T>& p, const Tensor<T>& y_c) {
  Tensor<T> h = apply_conv(p.head, y_c);
  for (const auto& blk : p.blocks) h = block_forward(blk, h);
  return add(y_c, apply_conv(p.tail, h));
}

template <typename T>
IspOutput<T> isp_forward_patch(const IspParams<T>& p, const Tensor<T>& x,
                               const Tensor<T>& guide) {
  IspOutput<T> o;
  o.y_c = cmod_forward(p.cmod, x, guide);
  o.rgb = reconstruct(p, o.y_c);
  return o;
}

namespace {

// Copies a window from a [C,H,W] buffer into a fresh [1,C,th,tw] tensor;
// cells outside the image are zero (the tiled passes rely on that to
// replicate whole-image zero padding).
Tensor<float> extract_window(const Tensor<float>& src, int x0, int y0, int tw,
                             int th) {
  const int C = src.dim(0), H = src.dim(1), W = src.dim(2);
  Tensor<float> out = Tensor<float>::zeros({1, C, th, tw});
  for (int c = 0; c < C; ++c) {
    const float* sc = src.data() + size_t(c) * H * W;
    float* oc = out.data() + size_t(c) * th * tw;
    for (int y = 0; y < th; ++y) {
      int iy = y0 + y;
      if (iy < 0 || iy >= H) continue;
      int xa = x0 < 0 ? 0 : x0;
      int xb = x0 + tw > W ? W : x0 + tw;
      if (xa >= xb) continue;
      std::memcpy(oc + size_t(y) * tw + (xa - x0),
                  sc + size_t(iy) * W + xa, size_t(xb - xa) * sizeof(float));
    }
  }
  return out;
}

void paste_window(Tensor<float>& dst, int x0, int y0,
                  const Tensor<float>& tile) {
  const int C = dst.dim(0), H = dst.dim(1), W = dst.dim(2);
  const int th = tile.dim(2), tw = tile.dim(3);
  (void)H;
  for (int c = 0; c < C; ++c) {
    float* dc = dst.data() + size_t(c) * H * W;
    const float* tc = tile.data() + size_t(c) * th * tw;
    for (int y = 0; y < th; ++y)
      std::memcpy(dc + size_t(y0 + y) * W + x0, tc + size_t(y) * tw,
                  size_t(tw) * sizeof(float));
  }
}

// Zeroes halo cells that fall outside the image so the following valid
// convolution sees exactly the zero padding of the whole-image pass.
void zero_outside(Tensor<float>& t, int x0, int y0, int H, int W) {
  const int C = t.dim(1), th = t.dim(2), tw = t.dim(3);
  for (int c = 0; c < C; ++c) {
    float* tc = t.data() + size_t(c) * th * tw;
    for (int y = 0; y < th; ++y) {
      int iy = y0 + y;
      if (iy < 0 || iy >= H) {
        std::memset(tc + size_t(y) * tw, 0, size_t(tw) * sizeof(float));
        continue;
      }
      for (int x = 0; x < tw; ++x) {
        int ix = x0 + x;
        if (ix < 0 || ix >= W) tc[size_t(y) * tw + x] = 0.0f;
      }
    }
  }
}

// LN -> expand -> depthwise 3x3 -> GELU for one output tile, read with a
// one-pixel halo from the materialized block input.
Tensor<float> block_pre_ca_tile(const BlockParams<float>& blk,
                                const Tensor<float>& feat, int x0, int y0,
                                int tw, int th) {
  const int H = feat.dim(1), W = feat.dim(2);
  Tensor<float> xt = extract_window(feat, x0 - 1, y0 - 1, tw + 2, th + 2);
  Tensor<float> t = layer_norm_channels(xt, blk.ln1.gamma, blk.ln1.beta);
  t = conv2d(t, blk.expand.w, blk.expand.b, 1, 0, 1);
  zero_outside(t, x0 - 1, y0 - 1, H, W);
  t = conv2d(t, blk.dw.w, blk.dw.b, 1, 0, blk.dw.groups);
  return gelu(t);
}

struct TileRect {
  int x0, y0, w, h;
};

std::vector<TileRect> tile_grid(int H, int W, int tile) {
  std::vector<TileRect> rects;
  for (int y0 = 0; y0 < H; y0 += tile)
    for (int x0 = 0; x0 < W; x0 += tile)
      rects.push_back({x0, y0, x0 + tile > W ? W - x0 : tile,
                       y0 + tile > H ? H - y0 : tile});
  return rects;
}

Tensor<float> squeeze_batch(const Tensor<float>& x) {
  Tensor<float> out = Tensor<float>::uninit({x.dim(1), x.dim(2), x.dim(3)});
  std::memcpy(out.data(), x.data(), x.size() * sizeof(float));
  return out;
}

}  // namespace

Tensor<float> isp_forward_fullres(const IspParams<float>& p,
                                  const BayerImage& raw, int tile,
                                  int overlap) {
  p.cfg.validate();
  raw.validate();
  NoGradGuard<float> guard(p.head.w.tape());

  Tensor<float> mosaic = normalize_mosaic(raw);
  Tensor<float> x3 = demosaic_bilinear(mosaic);
  Tensor<float> guide =
      stack_batch<float>({make_guide(pack_rggb(mosaic), p.cfg.guide_size)});
  Tensor<float> mv = encode_guide(p.cmod, guide);  // once per frame

  const int H = raw.height, W = raw.width;
  if (tile <= 0) {
    Tensor<float> x = stack_batch<float>({x3});
    Tensor<float> y_c =
        project_out(p.cmod, apply_modification(project_in(p.cmod, x), mv));
    return squeeze_batch(reconstruct(p, y_c));
  }

  CTXISP_CHECK(tile >= 32, "isp_forward_fullres: tile must be >= 32");
  CTXISP_CHECK(overlap >= 16, "isp_forward_fullres: overlap must be >= 16");
  const auto rects = tile_grid(H, W, tile);
  const int C = p.cfg.width, C2 = 2 * p.cfg.width;

  // Color module is pointwise given mv, so its tiles need no halo.
  Tensor<float> y_c = Tensor<float>::uninit({3, H, W});
  for (const auto& r : rects) {
    Tensor<float> xt = extract_window(x3, r.x0, r.y0, r.w, r.h);
    Tensor<float> yt =
        project_out(p.cmod, apply_modification(project_in(p.cmod, xt), mv));
    paste_window(y_c, r.x0, r.y0, yt);
  }

  Tensor<float> feat = Tensor<float>::uninit({C, H, W});
  for (const auto& r : rects) {
    Tensor<float> xt =
        extract_window(y_c, r.x0 - 1, r.y0 - 1, r.w + 2, r.h + 2);
    paste_window(feat, r.x0, r.y0,
                 conv2d(xt, p.head.w, p.head.b, 1, 0, 1));
  }

  for (const auto& blk : p.blocks) {
    // Pass A: exact global statistics for the channel-attention gate.
    std::vector<double> sums(size_t(C2), 0.0);
    for (const auto& r : rects) {
      Tensor<float> t = block_pre_ca_tile(blk, feat, r.x0, r.y0, r.w, r.h);
      const size_t thw = size_t(r.w) * r.h;
      for (int c = 0; c < C2; ++c) {
        const float* tc = t.data() + size_t(c) * thw;
        double s = 0;
        for (size_t i = 0; i < thw; ++i) s += double(tc[i]);
        sums[size_t(c)] += s;
      }
    }
    Tensor<float> gap = Tensor<float>::uninit({1, C2, 1, 1});
    for (int c = 0; c < C2; ++c)
      gap.data()[c] = float(sums[size_t(c)] / (double(H) * W));
    Tensor<float> gate = sigmoid(apply_conv(
        blk.ca_expand, gelu(apply_conv(blk.ca_reduce, gap))));

    // Pass B: finish the block tile by tile with the global gate.
    Tensor<float> next = Tensor<float>::uninit({C, H, W});
    for (const auto& r : rects) {
      Tensor<float> t = block_pre_ca_tile(blk, feat, r.x0, r.y0, r.w, r.h);
      t = channel_scale(t, gate);
      t = conv2d(t, blk.project.w, blk.project.b, 1, 0, 1);
      Tensor<float> xt = extract_window(feat, r.x0, r.y0, r.w, r.h);
      Tensor<float> x1 = add(xt, channel_scale(t, blk.alpha));
      Tensor<float> u = layer_norm_channels(x1, blk.ln2.gamma, blk.ln2.beta);
      u = conv2d(gelu(conv2d(u, blk.ffn1.w, blk.ffn1.b, 1, 0, 1)), blk.ffn2.w,
                 blk.ffn2.b, 1, 0, 1);
      paste_window(next, r.x0, r.y0, add(x1, channel_scale(u, blk.beta)));
    }
    feat = next;
  }

  Tensor<float> out = Tensor<float>::uninit({3, H, W});
  for (const auto& r : rects) {
    Tensor<float> ft =
        extract_window(feat, r.x0 - 1, r.y0 - 1, r.w + 2, r.h + 2);
    Tensor<float> rgb_t = add(extract_window(y_c, r.x0, r.y0, r.w, r.h),
                              conv2d(ft, p.tail.w, p.tail.b, 1, 0, 1));
    paste_window(out, r.x0, r.y0, rgb_t);
  }
  return out;
}

template <typename T>
void visit_params(
    IspParams<T>& p,
    const std::function<void(const std::string&, Tensor<T>&)>& f) {
  visit_cmod(p.cmod, "cmod.", f);
  f("head.w", p.head.w);
  f("head.b", p.head.b);
  for (size_t i = 0; i < p.blocks.size(); ++i) {
    auto& blk = p.blocks[i];
    std::string pre = "blocks." + std::to_string(i) + ".";
    f(pre + "ln1.gamma", blk.ln1.gamma);
    f(pre + "ln1.beta", blk.ln1.beta);
    auto layer = [&](const char* name, ConvLayer<T>& l) {
      f(pre + name + ".w", l.w);
      f(pre + name + ".b", l.b);
    };
    layer("expand", blk.expand);
    layer("dw", blk.dw);
    layer("ca_reduce", blk.ca_reduce);
    layer("ca_expand", blk.ca_expand);
    layer("project", blk.project);
    f(pre + "ln2.gamma", blk.ln2.gamma);
    f(pre + "ln2.beta", blk.ln2.beta);
    layer("ffn1", blk.ffn1);
    layer("ffn2", blk.ffn2);
    f(pre + "alpha", blk.alpha);
    f(pre + "beta", blk.beta);
  }
  f("tail.w", p.tail.w);
  f("tail.b", p.tail.b);
}

template <typename T>
size_t count_params(IspParams<T>& p) {
  size_t n = 0;
  visit_params<T>(p, [&n](const std::string&, Tensor<T>& t) { n += t.size(); });
  return n;
}

MacReport count_macs(const ModelConfig& cfg, int h, int w) {
  cfg.validate();
  CTXISP_CHECK(h > 0 && w > 0, "count_macs: resolution must be positive");
  MacReport rep;
  auto put = [&rep](const std::string& name, uint64_t m) {
    rep.entries.push_back({name, m});
    rep.total += m;
  };
  const int k = cfg.mod_dim, pw = cfg.proj_width, C = cfg.width,
            C2 = 2 * cfg.width, CR = ca_reduced_width(cfg);
  put("cmod.in1", conv_macs(pw, 3, 1, 1, 1, h, w));
  put("cmod.in2", conv_macs(k, pw, 1, 1, 1, h, w));
  const int e1 = (cfg.guide_size - 7) / 2 + 1;
  const int pl = (e1 - 2) / 2 + 1;
  const int e2 = (pl - 5) / 2 + 1;
  put("cmod.enc1", conv_macs(cfg.enc_width1, 4, 1, 7, 7, e1, e1));
  put("cmod.enc2", conv_macs(cfg.enc_width2, cfg.enc_width1, 1, 5, 5, e2, e2));
  put("cmod.enc3", conv_macs(k, cfg.enc_width2, 1, 1, 1, 1, 1));
  put("cmod.out1", conv_macs(pw, k, 1, 1, 1, h, w));
  put("cmod.out2", conv_macs(3, pw, 1, 1, 1, h, w));
  put("head", conv_macs(C, 3, 1, 3, 3, h, w));
  for (int i = 0; i < cfg.num_blocks; ++i) {
    std::string pre = "blocks." + std::to_string(i) + ".";
    put(pre + "expand", conv_macs(C2, C, 1, 1, 1, h, w));
    put(pre + "dw", conv_macs(C2, C2, C2, 3, 3, h, w));
    put(pre + "ca_reduce", conv_macs(CR, C2, 1, 1, 1, 1, 1));
    put(pre + "ca_expand", conv_macs(C2, CR, 1, 1, 1, 1, 1));
    put(pre + "project", conv_macs(C, C2, 1, 1, 1, h, w));
    put(pre + "ffn1", conv_macs(C2, C, 1, 1, 1, h, w));
    put(pre + "ffn2", conv_macs(C, C2, 1, 1, 1, h, w));
  }
  put("tail", conv_macs(3, C, 1, 3, 3, h, w));
  return rep;
}

#define CTXISP_INSTANTIATE(T)                                                \
  template IspParams<T> init_isp<T>(const ModelConfig&, uint64_t, Tape<T>*); \
  template Tensor<T> block_forward<T>(const BlockParams<T>&,                 \
                                      const Tensor<T>&);                     \
  template Tensor<T> reconstruct<T>(const IspParams<T>&, const Tensor<T>&);  \
  template IspOutput<T> isp_forward_patch<T>(const IspParams<T>&,            \
                                             const Tensor<T>&,               \
                                             const Tensor<T>&);              \
  template void visit_params<T>(                                             \
      IspParams<T>&,                                                         \
      const std::function<void(const std::string&, Tensor<T>&)>&);           \
  template size_t count_params<T>(IspParams<T>&);

CTXISP_INSTANTIATE(float)
CTXISP_INSTANTIATE(double)
#undef CTXISP_INSTANTIATE

}  // namespace ctxisp
