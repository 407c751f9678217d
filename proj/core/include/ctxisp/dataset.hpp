// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic scene generation with a known ground-truth ISP, patch
// extraction, correlation filtering, translation alignment, and
// manifest I/O.
//
// The synthetic design puts a single global illuminant on each scene:
// per-scene white-balance gains are the one property a local patch
// cannot recover on its own, which is exactly what the full-image
// guide is supposed to supply.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ctxisp/raw.hpp"
#include "ctxisp/tensor.hpp"

namespace ctxisp {

// Row-major 3x3 color correction matrix. Rows sum to 1 so neutral
// colors stay neutral.
inline constexpr std::array<float, 9> kDefaultCcm = {
    1.70f,  -0.55f, -0.15f,  //
    -0.25f, 1.45f,  -0.20f,  //
    0.05f,  -0.55f, 1.50f,
};

inline constexpr std::array<float, 9> kIdentityCcm = {
    1.f, 0.f, 0.f, 0.f, 1.f, 0.f, 0.f, 0.f, 1.f,
};

struct SceneParams {
  // Poisson-Gaussian noise on the mosaic, in normalized units:
  // sigma(v) = sqrt(noise_shot^2 * v + noise_read^2). Zero disables.
  double noise_read = 0.0;
  double noise_shot = 0.0;

  // Illuminant gains applied to the linear scene before mosaicing.
  // When random_gains is set, gain_r and gain_b are drawn log-uniform
  // from [0.4, 2.5] and the fields below are ignored. Green is 1.
  bool random_gains = true;
  double gain_r = 1.0;
  double gain_b = 1.0;

  std::array<float, 9> ccm = kDefaultCcm;
  bool srgb_gamma = true;

  int min_shapes = 6;
  int max_shapes = 14;

  std::array<int, 4> black_level = {64, 64, 64, 64};
  int white_level = 1023;
};

// Everything needed to reproduce the target RGB from the RAW.
struct SceneMetadata {
  double gain_r = 1.0;
  double gain_b = 1.0;
  std::array<float, 9> ccm = kDefaultCcm;
  bool srgb_gamma = true;
  double noise_read = 0.0;
  double noise_shot = 0.0;
};

struct ScenePair {
  std::string scene_id;
  BayerImage raw;
  Tensor<float> target;  // [3,H,W] in [0,1]
  SceneMetadata meta;
};

struct PatchPair {
  std::string scene_id;
  int x0 = 0;  // even crop origin in mosaic coordinates
  int y0 = 0;
  int size = 0;
  BayerImage raw;
  Tensor<float> rgb;  // [3,size,size]
  double ncc = 0.0;
};

// Renders a random piecewise-smooth linear scene, applies per-scene
// illuminant gains, mosaics with RGGB, quantizes to the configured
// black/white levels (adding noise if enabled), and produces the
// target RGB by the oracle pipeline on the clean quantized mosaic.
// H and W must be even and >= 256.
ScenePair synth_scene_generate(std::uint64_t rng_seed, int height, int width,
                               const SceneParams& params);

// The ground-truth ISP: inverse gains, CCM, clamp to [0,1], then sRGB
// encode when enabled. Input is a demosaiced normalized RAW [3,H,W].
Tensor<float> ideal_isp(const Tensor<float>& demosaiced,
                        const SceneMetadata& meta);

// Grid crops at even offsets; partial border crops are discarded.
// Each patch carries its NCC score (demosaiced RAW luma vs target).
std::vector<PatchPair> extract_patches(const ScenePair& scene, int size = 448,
                                       int stride = 448);

// BT.601 luma of an RGB image [3,H,W] -> [H,W].
Tensor<float> luma_bt601(const Tensor<float>& rgb);

// Zero-mean normalized cross-correlation in [-1,1]. Accepts [H,W]
// planes or [3,H,W] images (reduced to luma). Constant inputs are
// defined to correlate at 0.
double ncc(const Tensor<float>& a, const Tensor<float>& b);

struct AlignResult {
  int dx = 0;
  int dy = 0;
  double score = 0.0;
};

// Exhaustive integer-shift NCC search over [-max_shift, max_shift]^2.
// Returns the shift mapping proxy(x,y) onto target(x+dx, y+dy). Ties
// break to the smallest |dx|+|dy|, then lexicographic (dx,dy).
AlignResult align_translation(const Tensor<float>& proxy,
                              const Tensor<float>& target, int max_shift = 16);

struct ManifestPatch {
  std::string id;
  int x0 = 0;
  int y0 = 0;
  int size = 0;
  double ncc = 0.0;
  std::string raw_path;  // relative to the manifest directory
  std::string rgb_path;
};

struct ManifestScene {
  std::string id;
  bool is_test = false;
  SceneMetadata meta;
  std::array<int, 4> black_level = {64, 64, 64, 64};
  int white_level = 1023;
  std::string raw_path;
  std::string rgb_path;
  std::vector<ManifestPatch> patches;
};

struct Manifest {
  std::uint64_t seed = 0;
  int patch_size = 448;
  std::vector<ManifestScene> scenes;
  std::string root;  // directory holding the manifest; not serialized
};

// Writes scene and patch files under out_dir and returns the manifest.
// The split is by scene: max(1, floor((1-split_ratio)*N)) test scenes,
// chosen by a seeded shuffle. Patches with ncc <= ncc_threshold are
// dropped; zero surviving patches is an error.
Manifest build_dataset(const std::vector<ScenePair>& scenes,
                       std::uint64_t seed, const std::string& out_dir,
                       double split_ratio = 0.9, double ncc_threshold = 0.5,
                       int patch_size = 448, int patch_stride = 448);

void save_manifest(const Manifest& m, const std::string& path);
Manifest load_manifest(const std::string& path);

// In-memory training view of a dataset. Tensors are float, untaped.
struct DataItem {
  std::string id;
  int scene_index = 0;
  Tensor<float> input;       // [3,P,P] demosaiced normalized RAW
  Tensor<float> target;      // [3,P,P]
  Tensor<float> target_lab;  // [3,P,P] cached for the color loss
  Tensor<float> guide;       // [4,gs,gs] built from the patch mosaic
};

struct LoadedDataset {
  int guide_size = 0;
  std::vector<Tensor<float>> scene_guides;  // [4,gs,gs], full-scene RAW
  std::vector<DataItem> train;
  std::vector<DataItem> test;
};

LoadedDataset load_dataset(const Manifest& m, int guide_size);

}  // namespace ctxisp
