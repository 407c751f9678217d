// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#include "ctxisp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ctxisp/common.hpp"
#include "ctxisp/image_io.hpp"
#include "ctxisp/ops.hpp"
#include "ctxisp/rng.hpp"

namespace ctxisp {

namespace {

struct Rgb {
  float r, g, b;
};

// h in [0,1), s and v in [0,1].
Rgb hsv_to_rgb(float h, float s, float v) {
  float hf = h * 6.0f;
  int sector = std::min(5, int(hf));
  float f = hf - float(sector);
  float p = v * (1.0f - s);
  float q = v * (1.0f - s * f);
  float t = v * (1.0f - s * (1.0f - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

float smoothstep01(float t) {
  t = std::clamp(t, 0.0f, 1.0f);
  return t * t * (3.0f - 2.0f * t);
}

// Piecewise-smooth linear reflectance: a gently tinted luminance ramp,
// a handful of saturated shapes with feathered edges, and shared
// per-pixel luminance jitter. Values land in [0.01, 0.99] so neither
// black nor white clips before the illuminant is applied.
Tensor<float> render_linear_scene(Rng& rng, int h, int w,
                                  const SceneParams& params) {
  auto img = Tensor<float>::uninit({3, h, w});
  float* d = img.data();
  const size_t plane = size_t(h) * size_t(w);

  float base = float(rng.uniform(0.30, 0.60));
  float ramp_x = float(rng.uniform(-0.15, 0.15));
  float ramp_y = float(rng.uniform(-0.15, 0.15));
  float tint[3];
  for (float& t : tint) t = float(rng.uniform(0.96, 1.04));
  for (int y = 0; y < h; ++y) {
    float fy = float(y) / float(h - 1);
    for (int x = 0; x < w; ++x) {
      float fx = float(x) / float(w - 1);
      float lum = base + ramp_x * fx + ramp_y * fy;
      size_t i = size_t(y) * w + x;
      d[i] = lum * tint[0];
      d[plane + i] = lum * tint[1];
      d[2 * plane + i] = lum * tint[2];
    }
  }

  CTXISP_CHECK(params.min_shapes >= 0 && params.max_shapes >= params.min_shapes,
               "scene shape count range is invalid");
  int span = params.max_shapes - params.min_shapes + 1;
  int num_shapes = params.min_shapes + int(rng.next_below(uint64_t(span)));
  int side = std::min(h, w);
  for (int s = 0; s < num_shapes; ++s) {
    bool circle = rng.uniform() < 0.6;
    Rgb color = hsv_to_rgb(float(rng.uniform()), float(rng.uniform(0.45, 0.95)),
                           float(rng.uniform(0.25, 0.95)));
    float col[3] = {color.r, color.g, color.b};
    if (circle) {
      float cx = float(rng.uniform(0.0, w));
      float cy = float(rng.uniform(0.0, h));
      float radius = float(rng.uniform(side / 16.0, side / 6.0));
      const float feather = 1.5f;
      int x0 = std::max(0, int(cx - radius - 2));
      int x1 = std::min(w - 1, int(cx + radius + 2));
      int y0 = std::max(0, int(cy - radius - 2));
      int y1 = std::min(h - 1, int(cy + radius + 2));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          float dx = float(x) - cx;
          float dy = float(y) - cy;
          float dist = std::sqrt(dx * dx + dy * dy);
          float alpha = smoothstep01((radius - dist) / feather);
          if (alpha <= 0.0f) continue;
          size_t i = size_t(y) * w + x;
          for (int c = 0; c < 3; ++c) {
            float& v = d[size_t(c) * plane + i];
            v += alpha * (col[c] - v);
          }
        }
      }
    } else {
      int rw = int(rng.uniform(side / 12.0, side / 4.0));
      int rh = int(rng.uniform(side / 12.0, side / 4.0));
      int x0 = int(rng.uniform(0.0, std::max(1, w - rw)));
      int y0 = int(rng.uniform(0.0, std::max(1, h - rh)));
      int x1 = std::min(w - 1, x0 + rw);
      int y1 = std::min(h - 1, y0 + rh);
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          size_t i = size_t(y) * w + x;
          for (int c = 0; c < 3; ++c) d[size_t(c) * plane + i] = col[c];
        }
      }
    }
  }

  // Luminance-only jitter: keeps chroma clean so the illuminant stays
  // the dominant global color cue.
  for (size_t i = 0; i < plane; ++i) {
    float t = float(rng.uniform(-0.01, 0.01));
    for (int c = 0; c < 3; ++c) {
      float& v = d[size_t(c) * plane + i];
      v = std::clamp(v + t, 0.01f, 0.99f);
    }
  }
  return img;
}

// RGGB channel of mosaic position (y,x): 0=R, 1=G1, 2=G2, 3=B.
inline int cfa_site(int y, int x) { return (y & 1) * 2 + (x & 1); }

// 0=R, 1=G, 2=B plane index for an RGGB site.
inline int cfa_color(int site) { return site == 0 ? 0 : (site == 3 ? 2 : 1); }

uint16_t quantize_site(double v, int black, int white) {
  double counts = double(black) + v * double(white - black);
  long q = std::lround(counts);
  q = std::clamp(q, 0L, long(white));
  return uint16_t(q);
}

}  // namespace

Tensor<float> ideal_isp(const Tensor<float>& demosaiced,
                        const SceneMetadata& meta) {
  CTXISP_CHECK(demosaiced.rank() == 3 && demosaiced.dim(0) == 3,
               "ideal_isp expects [3,H,W], got rank ", demosaiced.rank());
  CTXISP_CHECK(meta.gain_r > 0 && meta.gain_b > 0,
               "ideal_isp gains must be positive");
  const int h = demosaiced.dim(1);
  const int w = demosaiced.dim(2);
  const size_t plane = size_t(h) * size_t(w);
  const float* in = demosaiced.data();
  auto out = Tensor<float>::uninit({3, h, w});
  float* o = out.data();
  const float inv_r = float(1.0 / meta.gain_r);
  const float inv_b = float(1.0 / meta.gain_b);
  const std::array<float, 9>& m = meta.ccm;
  const float inv_gamma = 1.0f / 2.4f;
  for (size_t i = 0; i < plane; ++i) {
    float wb[3] = {in[i] * inv_r, in[plane + i], in[2 * plane + i] * inv_b};
    for (int c = 0; c < 3; ++c) {
      float v = m[c * 3] * wb[0] + m[c * 3 + 1] * wb[1] + m[c * 3 + 2] * wb[2];
      v = std::clamp(v, 0.0f, 1.0f);
      if (meta.srgb_gamma) {
        v = v <= 0.0031308f ? 12.92f * v
                            : 1.055f * std::pow(v, inv_gamma) - 0.055f;
      }
      o[size_t(c) * plane + i] = v;
    }
  }
  return out;
}

ScenePair synth_scene_generate(std::uint64_t rng_seed, int height, int width,
                               const SceneParams& params) {
  CTXISP_CHECK(height % 2 == 0 && width % 2 == 0,
               "scene dims must be even, got ", height, "x", width);
  CTXISP_CHECK(height >= 256 && width >= 256,
               "scene dims must be >= 256, got ", height, "x", width);
  CTXISP_CHECK(params.white_level > 0, "white_level must be positive");
  for (int b : params.black_level) {
    CTXISP_CHECK(b >= 0 && b < params.white_level,
                 "black_level must sit below white_level");
  }

  Rng rng(rng_seed);
  SceneMetadata meta;
  meta.ccm = params.ccm;
  meta.srgb_gamma = params.srgb_gamma;
  meta.noise_read = params.noise_read;
  meta.noise_shot = params.noise_shot;
  if (params.random_gains) {
    meta.gain_r = std::exp(rng.uniform(std::log(0.4), std::log(2.5)));
    meta.gain_b = std::exp(rng.uniform(std::log(0.4), std::log(2.5)));
  } else {
    CTXISP_CHECK(params.gain_r > 0 && params.gain_b > 0,
                 "fixed gains must be positive");
    meta.gain_r = params.gain_r;
    meta.gain_b = params.gain_b;
  }

  Tensor<float> albedo = render_linear_scene(rng, height, width, params);
  const float* a = albedo.data();
  const size_t plane = size_t(height) * size_t(width);
  const double gains[3] = {meta.gain_r, 1.0, meta.gain_b};

  BayerImage clean;
  clean.width = width;
  clean.height = height;
  clean.black_level = params.black_level;
  clean.white_level = params.white_level;
  clean.samples.resize(plane);
  const bool noisy = params.noise_read > 0 || params.noise_shot > 0;
  std::vector<uint16_t> noisy_samples;
  if (noisy) noisy_samples.resize(plane);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      size_t i = size_t(y) * width + x;
      int site = cfa_site(y, x);
      int color = cfa_color(site);
      double v = std::min(1.0, double(a[size_t(color) * plane + i]) * gains[color]);
      int black = params.black_level[site];
      clean.samples[i] = quantize_site(v, black, params.white_level);
      if (noisy) {
        double sigma = std::sqrt(params.noise_shot * params.noise_shot * v +
                                 params.noise_read * params.noise_read);
        double vn = v + sigma * rng.normal();
        noisy_samples[i] = quantize_site(vn, black, params.white_level);
      }
    }
  }

  ScenePair scene;
  scene.meta = meta;
  scene.target = ideal_isp(demosaic_bilinear(clean), meta);
  scene.raw = std::move(clean);
  if (noisy) scene.raw.samples = std::move(noisy_samples);
  return scene;
}

Tensor<float> luma_bt601(const Tensor<float>& rgb) {
  CTXISP_CHECK(rgb.rank() == 3 && rgb.dim(0) == 3,
               "luma_bt601 expects [3,H,W]");
  const int h = rgb.dim(1);
  const int w = rgb.dim(2);
  const size_t plane = size_t(h) * size_t(w);
  const float* d = rgb.data();
  auto out = Tensor<float>::uninit({h, w});
  float* o = out.data();
  for (size_t i = 0; i < plane; ++i) {
    o[i] = 0.299f * d[i] + 0.587f * d[plane + i] + 0.114f * d[2 * plane + i];
  }
  return out;
}

namespace {

Tensor<float> as_luma(const Tensor<float>& img) {
  if (img.rank() == 2) return img;
  return luma_bt601(img);
}

// NCC over the overlap of a against b shifted by (dx,dy); the caller
// guarantees a non-empty overlap. Constant windows correlate at 0.
double ncc_shifted(const Tensor<float>& a, const Tensor<float>& b, int dx,
                   int dy) {
  const int h = a.dim(0);
  const int w = a.dim(1);
  const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
  const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
  const float* pa = a.data();
  const float* pb = b.data();
  double sa = 0, sb = 0;
  const long n = long(x1 - x0) * long(y1 - y0);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      sa += pa[size_t(y) * w + x];
      sb += pb[size_t(y + dy) * w + (x + dx)];
    }
  }
  const double ma = sa / double(n), mb = sb / double(n);
  double va = 0, vb = 0, cov = 0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      double da = pa[size_t(y) * w + x] - ma;
      double db = pb[size_t(y + dy) * w + (x + dx)] - mb;
      va += da * da;
      vb += db * db;
      cov += da * db;
    }
  }
  if (va < 1e-20 || vb < 1e-20) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace

double ncc(const Tensor<float>& a, const Tensor<float>& b) {
  Tensor<float> la = as_luma(a);
  Tensor<float> lb = as_luma(b);
  CTXISP_CHECK(la.shape() == lb.shape(), "ncc inputs must share a shape");
  CTXISP_CHECK(la.rank() == 2, "ncc expects [H,W] or [3,H,W] inputs");
  return ncc_shifted(la, lb, 0, 0);
}

AlignResult align_translation(const Tensor<float>& proxy,
                              const Tensor<float>& target, int max_shift) {
  Tensor<float> la = as_luma(proxy);
  Tensor<float> lb = as_luma(target);
  CTXISP_CHECK(la.shape() == lb.shape(),
               "align_translation inputs must share a shape");
  CTXISP_CHECK(max_shift >= 0, "max_shift must be >= 0");
  const int h = la.dim(0);
  const int w = la.dim(1);
  CTXISP_CHECK(2 * max_shift < std::min(h, w),
               "max_shift ", max_shift, " leaves no overlap on ", h, "x", w);

  AlignResult best;
  best.score = -std::numeric_limits<double>::infinity();
  const double tie_eps = 1e-9;
  for (int dy = -max_shift; dy <= max_shift; ++dy) {
    for (int dx = -max_shift; dx <= max_shift; ++dx) {
      double score = ncc_shifted(la, lb, dx, dy);
      bool take;
      if (score > best.score + tie_eps) {
        take = true;
      } else if (score >= best.score - tie_eps) {
        int cand = std::abs(dx) + std::abs(dy);
        int cur = std::abs(best.dx) + std::abs(best.dy);
        take = cand < cur ||
               (cand == cur &&
                (dx < best.dx || (dx == best.dx && dy < best.dy)));
      } else {
        take = false;
      }
      if (take) best = {dx, dy, score};
    }
  }
  return best;
}

std::vector<PatchPair> extract_patches(const ScenePair& scene, int size,
                                       int stride) {
  CTXISP_CHECK(size > 0 && size % 2 == 0, "patch size must be even, got ",
               size);
  CTXISP_CHECK(stride > 0 && stride % 2 == 0, "patch stride must be even, got ",
               stride);
  scene.raw.validate();
  CTXISP_CHECK(scene.target.rank() == 3 && scene.target.dim(0) == 3 &&
                   scene.target.dim(1) == scene.raw.height &&
                   scene.target.dim(2) == scene.raw.width,
               "scene target dims must match the mosaic");

  std::vector<PatchPair> patches;
  const size_t splane = size_t(scene.raw.height) * size_t(scene.raw.width);
  const float* t = scene.target.data();
  for (int y0 = 0; y0 + size <= scene.raw.height; y0 += stride) {
    for (int x0 = 0; x0 + size <= scene.raw.width; x0 += stride) {
      PatchPair p;
      p.scene_id = scene.scene_id;
      p.x0 = x0;
      p.y0 = y0;
      p.size = size;
      p.raw = crop_bayer(scene.raw, x0, y0, size, size);
      p.rgb = Tensor<float>::uninit({3, size, size});
      float* dst = p.rgb.data();
      for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < size; ++y) {
          const float* src = t + size_t(c) * splane +
                             size_t(y0 + y) * scene.raw.width + x0;
          std::copy(src, src + size,
                    dst + (size_t(c) * size + y) * size);
        }
      }
      p.ncc = ncc(luma_bt601(demosaic_bilinear(p.raw)), luma_bt601(p.rgb));
      patches.push_back(std::move(p));
    }
  }
  return patches;
}

namespace {

std::string scene_file(const std::string& id, const char* what) {
  return id + what;
}

nlohmann::json meta_to_json(const ManifestScene& ms) {
  nlohmann::json j;
  j["id"] = ms.id;
  j["split"] = ms.is_test ? "test" : "train";
  j["raw"] = ms.raw_path;
  j["rgb"] = ms.rgb_path;
  j["black_level"] = ms.black_level;
  j["white_level"] = ms.white_level;
  j["gain_r"] = ms.meta.gain_r;
  j["gain_b"] = ms.meta.gain_b;
  j["ccm"] = ms.meta.ccm;
  j["srgb_gamma"] = ms.meta.srgb_gamma;
  j["noise_read"] = ms.meta.noise_read;
  j["noise_shot"] = ms.meta.noise_shot;
  nlohmann::json jp = nlohmann::json::array();
  for (const ManifestPatch& p : ms.patches) {
    jp.push_back({{"id", p.id},
                  {"x0", p.x0},
                  {"y0", p.y0},
                  {"size", p.size},
                  {"ncc", p.ncc},
                  {"raw", p.raw_path},
                  {"rgb", p.rgb_path}});
  }
  j["patches"] = std::move(jp);
  return j;
}

ManifestScene meta_from_json(const nlohmann::json& j) {
  ManifestScene ms;
  ms.id = j.at("id").get<std::string>();
  std::string split = j.at("split").get<std::string>();
  CTXISP_CHECK(split == "train" || split == "test",
               "manifest split must be train or test, got ", split);
  ms.is_test = split == "test";
  ms.raw_path = j.at("raw").get<std::string>();
  ms.rgb_path = j.at("rgb").get<std::string>();
  ms.black_level = j.at("black_level").get<std::array<int, 4>>();
  ms.white_level = j.at("white_level").get<int>();
  ms.meta.gain_r = j.at("gain_r").get<double>();
  ms.meta.gain_b = j.at("gain_b").get<double>();
  ms.meta.ccm = j.at("ccm").get<std::array<float, 9>>();
  ms.meta.srgb_gamma = j.at("srgb_gamma").get<bool>();
  ms.meta.noise_read = j.at("noise_read").get<double>();
  ms.meta.noise_shot = j.at("noise_shot").get<double>();
  for (const nlohmann::json& jp : j.at("patches")) {
    ManifestPatch p;
    p.id = jp.at("id").get<std::string>();
    p.x0 = jp.at("x0").get<int>();
    p.y0 = jp.at("y0").get<int>();
    p.size = jp.at("size").get<int>();
    p.ncc = jp.at("ncc").get<double>();
    p.raw_path = jp.at("raw").get<std::string>();
    p.rgb_path = jp.at("rgb").get<std::string>();
    ms.patches.push_back(std::move(p));
  }
  return ms;
}

}  // namespace

Manifest build_dataset(const std::vector<ScenePair>& scenes,
                       std::uint64_t seed, const std::string& out_dir,
                       double split_ratio, double ncc_threshold,
                       int patch_size, int patch_stride) {
  CTXISP_CHECK(scenes.size() >= 2, "build_dataset needs >= 2 scenes, got ",
               scenes.size());
  CTXISP_CHECK(split_ratio > 0.0 && split_ratio < 1.0,
               "split_ratio must lie in (0,1), got ", split_ratio);

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  CTXISP_REQUIRE(!ec, "cannot create dataset directory ", out_dir, ": ",
                 ec.message());

  const int n = int(scenes.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(Rng::mix(seed, 0x5917u));
  split_rng.shuffle(order);
  int test_count = std::max(1, int(std::floor((1.0 - split_ratio) * n)));
  std::vector<bool> is_test(n, false);
  for (int i = 0; i < test_count; ++i) is_test[size_t(order[i])] = true;

  Manifest m;
  m.seed = seed;
  m.patch_size = patch_size;
  m.root = fs::absolute(out_dir).string();
  size_t kept = 0;
  for (int i = 0; i < n; ++i) {
    const ScenePair& scene = scenes[size_t(i)];
    CTXISP_CHECK(!scene.scene_id.empty(), "scene ", i, " has an empty id");
    ManifestScene ms;
    ms.id = scene.scene_id;
    ms.is_test = is_test[size_t(i)];
    ms.meta = scene.meta;
    ms.black_level = scene.raw.black_level;
    ms.white_level = scene.raw.white_level;
    ms.raw_path = scene_file(scene.scene_id, ".raw.pgm");
    ms.rgb_path = scene_file(scene.scene_id, ".rgb.png");
    write_pgm16(m.root + "/" + ms.raw_path, scene.raw.samples, scene.raw.width,
                scene.raw.height);
    write_png_rgb16(m.root + "/" + ms.rgb_path, scene.target);

    std::vector<PatchPair> patches =
        extract_patches(scene, patch_size, patch_stride);
    for (size_t k = 0; k < patches.size(); ++k) {
      const PatchPair& p = patches[k];
      if (!(p.ncc > ncc_threshold)) continue;
      char suffix[16];
      std::snprintf(suffix, sizeof suffix, "_p%02zu", k);
      ManifestPatch mp;
      mp.id = scene.scene_id + suffix;
      mp.x0 = p.x0;
      mp.y0 = p.y0;
      mp.size = p.size;
      mp.ncc = p.ncc;
      mp.raw_path = scene_file(mp.id, ".raw.pgm");
      mp.rgb_path = scene_file(mp.id, ".rgb.png");
      write_pgm16(m.root + "/" + mp.raw_path, p.raw.samples, p.raw.width,
                  p.raw.height);
      write_png_rgb16(m.root + "/" + mp.rgb_path, p.rgb);
      ms.patches.push_back(std::move(mp));
      ++kept;
    }
    m.scenes.push_back(std::move(ms));
  }
  CTXISP_REQUIRE(kept > 0, "no patches survived the ncc filter (threshold ",
                 ncc_threshold, ")");
  save_manifest(m, m.root + "/manifest.json");
  return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
  nlohmann::json j;
  j["format"] = "ctxisp-dataset";
  j["version"] = 1;
  j["seed"] = m.seed;
  j["patch_size"] = m.patch_size;
  nlohmann::json js = nlohmann::json::array();
  for (const ManifestScene& ms : m.scenes) js.push_back(meta_to_json(ms));
  j["scenes"] = std::move(js);
  std::ofstream f(path, std::ios::binary);
  CTXISP_REQUIRE(f.good(), "cannot open manifest for writing: ", path);
  f << j.dump(2) << '\n';
  CTXISP_REQUIRE(f.good(), "failed writing manifest: ", path);
}

Manifest load_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  CTXISP_REQUIRE(f.good(), "cannot open manifest: ", path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(detail::concat("manifest parse error in ", path,
                                            ": ", e.what()));
  }
  try {
    CTXISP_CHECK(j.at("format").get<std::string>() == "ctxisp-dataset",
                 "not a dataset manifest: ", path);
    CTXISP_CHECK(j.at("version").get<int>() == 1,
                 "unsupported manifest version in ", path);
    Manifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.patch_size = j.at("patch_size").get<int>();
    for (const nlohmann::json& js : j.at("scenes")) {
      m.scenes.push_back(meta_from_json(js));
    }
    m.root = std::filesystem::absolute(path).parent_path().string();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(detail::concat("manifest field error in ", path,
                                            ": ", e.what()));
  }
}

namespace {

BayerImage read_bayer(const std::string& path, const std::array<int, 4>& black,
                      int white) {
  BayerImage img;
  img.samples = read_pgm16(path, img.width, img.height);
  img.black_level = black;
  img.white_level = white;
  img.validate();
  return img;
}

// Lab image of a [3,H,W] target through the same float pipeline the
// color loss applies to predictions.
Tensor<float> lab_of(const Tensor<float>& rgb) {
  Tensor<float> batched = stack_batch(std::vector<Tensor<float>>{rgb});
  Tensor<float> lab = srgb_to_lab(batched);
  auto out = Tensor<float>::uninit(rgb.shape());
  std::copy(lab.data(), lab.data() + out.size(), out.data());
  return out;
}

}  // namespace

LoadedDataset load_dataset(const Manifest& m, int guide_size) {
  CTXISP_CHECK(!m.root.empty(), "manifest has no root directory");
  LoadedDataset ds;
  ds.guide_size = guide_size;
  for (size_t si = 0; si < m.scenes.size(); ++si) {
    const ManifestScene& ms = m.scenes[si];
    BayerImage raw =
        read_bayer(m.root + "/" + ms.raw_path, ms.black_level, ms.white_level);
    ds.scene_guides.push_back(make_guide(pack_rggb(raw), guide_size));
    for (const ManifestPatch& mp : ms.patches) {
      DataItem item;
      item.id = mp.id;
      item.scene_index = int(si);
      BayerImage praw = read_bayer(m.root + "/" + mp.raw_path, ms.black_level,
                                   ms.white_level);
      item.input = demosaic_bilinear(praw);
      item.guide = make_guide(pack_rggb(praw), guide_size);
      item.target = read_png_rgb(m.root + "/" + mp.rgb_path);
      CTXISP_CHECK(item.target.shape() == item.input.shape(),
                   "patch RGB dims disagree with the mosaic for ", mp.id);
      item.target_lab = lab_of(item.target);
      (ms.is_test ? ds.test : ds.train).push_back(std::move(item));
    }
  }
  return ds;
}

}  // namespace ctxisp
