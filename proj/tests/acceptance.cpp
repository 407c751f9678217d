// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0
//
// Release acceptance gate. Each criterion prints exactly one line:
//   CRITERION <n> PASS: <detail>
//   CRITERION <n> FAIL: <detail>
// and the process exits 0 only if every requested criterion passed.
// Thresholds are pinned next to each criterion; progress chatter for the
// long-running checks goes to stderr.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "ctxisp/cmod.hpp"
#include "ctxisp/dataset.hpp"
#include "ctxisp/losses.hpp"
#include "ctxisp/model.hpp"
#include "ctxisp/ops.hpp"
#include "ctxisp/raw.hpp"
#include "ctxisp/rng.hpp"
#include "ctxisp/tensor.hpp"
#include "ctxisp/trainer.hpp"

using namespace ctxisp;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Result {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 3) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(prec);
  ss << v;
  return ss.str();
}

template <typename T>
Tensor<T> rand_tensor(const Shape& shape, Rng& rng, T lo, T hi) {
  auto t = Tensor<T>::uninit(shape);
  for (size_t i = 0; i < t.size(); ++i)
    t.data()[i] = T(rng.uniform(double(lo), double(hi)));
  return t;
}

template <typename T>
Tensor<T> rand_var(const Shape& shape, Rng& rng, T lo, T hi, Tape<T>* tape) {
  auto t = Tensor<T>::variable(shape, tape);
  for (size_t i = 0; i < t.size(); ++i)
    t.data()[i] = T(rng.uniform(double(lo), double(hi)));
  return t;
}

Tensor<float> lab_of(const Tensor<float>& rgb3) {
  auto lab = srgb_to_lab(stack_batch<float>({rgb3}));
  auto out = Tensor<float>::uninit(rgb3.shape());
  std::memcpy(out.data(), lab.data(), lab.size() * sizeof(float));
  return out;
}

// In-memory dataset assembly straight from generated scenes; same filter
// and layout the on-disk pipeline produces, minus the file roundtrip.
LoadedDataset assemble_dataset(const std::vector<ScenePair>& scenes,
                               const std::vector<bool>& is_test, int patch,
                               int stride, int patch_guide, int scene_guide,
                               double ncc_threshold, int per_scene_cap = 0) {
  LoadedDataset ds;
  ds.guide_size = patch_guide;
  for (size_t i = 0; i < scenes.size(); ++i) {
    ds.scene_guides.push_back(
        make_guide(pack_rggb(scenes[i].raw), scene_guide));
    auto patches = extract_patches(scenes[i], patch, stride);
    int kept = 0;
    for (const auto& p : patches) {
      if (p.ncc <= ncc_threshold) continue;
      if (per_scene_cap > 0 && kept >= per_scene_cap) break;
      DataItem item;
      item.id = scenes[i].scene_id + "_p" + std::to_string(kept);
      item.scene_index = int(i);
      item.input = demosaic_bilinear(p.raw);
      item.target = p.rgb;
      item.target_lab = lab_of(p.rgb);
      item.guide = make_guide(pack_rggb(p.raw), patch_guide);
      (is_test[i] ? ds.test : ds.train).push_back(std::move(item));
      ++kept;
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Criterion 1: finite-difference gradient verification, 64-bit.
//   per-op max relative error <= 1e-5, composed model <= 1e-4,
//   >= 20 seeds, total runtime <= 120 s.

constexpr double kPerOpTol = 1e-5;
constexpr double kComposedTol = 1e-4;
constexpr int kGradSeeds = 20;
constexpr double kGradFd = 1e-6;
// The composed loss value is tens of Lab units, so finite differences at
// 1e-6 lose the quiet gradient components to rounding; 3e-5 sits on the
// measured plateau between rounding and truncation error.
constexpr double kComposedFd = 3e-5;
constexpr double kGradBudgetSec = 120.0;

double op_suite_worst(uint64_t seed, std::string& worst_name) {
  Tape<double> tape;
  Rng rng(Rng::mix(seed, 0x6f70u));
  double worst = 0;
  auto track = [&](const char* name, const GradCheckResult<double>& r) {
    if (r.max_rel > worst) {
      worst = r.max_rel;
      worst_name = name;
    }
  };
  auto vt = [&](const Shape& s, double lo, double hi) {
    return rand_var<double>(s, rng, lo, hi, &tape);
  };

  {  // general 3x3 conv, padding 1
    auto x = vt({2, 3, 6, 7}, -1, 1);
    auto w = vt({4, 3, 3, 3}, -1, 1);
    auto b = vt({4}, -1, 1);
    track("conv2d", grad_check<double>(
                        [&] { return mean_all(conv2d(x, w, b, 1, 1)); },
                        {x, w, b}, tape, rng, kGradFd, 12));
  }
  {  // strided 5x5
    auto x = vt({1, 3, 9, 11}, -1, 1);
    auto w = vt({2, 3, 5, 5}, -1, 1);
    auto b = vt({2}, -1, 1);
    track("conv2d_s2", grad_check<double>(
                           [&] { return mean_all(conv2d(x, w, b, 2, 2)); },
                           {x, w, b}, tape, rng, kGradFd, 12));
  }
  {  // pointwise
    auto x = vt({2, 4, 5, 5}, -1, 1);
    auto w = vt({6, 4, 1, 1}, -1, 1);
    auto b = vt({6}, -1, 1);
    track("conv2d_1x1", grad_check<double>(
                            [&] { return mean_all(conv2d(x, w, b)); },
                            {x, w, b}, tape, rng, kGradFd, 12));
  }
  {  // depthwise
    auto x = vt({1, 4, 6, 6}, -1, 1);
    auto w = vt({4, 1, 3, 3}, -1, 1);
    auto b = vt({4}, -1, 1);
    track("conv2d_dw", grad_check<double>(
                           [&] { return mean_all(conv2d(x, w, b, 1, 1, 4)); },
                           {x, w, b}, tape, rng, kGradFd, 12));
  }
  {  // grouped
    auto x = vt({1, 4, 6, 6}, -1, 1);
    auto w = vt({6, 2, 3, 3}, -1, 1);
    auto b = vt({6}, -1, 1);
    track("conv2d_g2", grad_check<double>(
                           [&] { return mean_all(conv2d(x, w, b, 1, 1, 2)); },
                           {x, w, b}, tape, rng, kGradFd, 12));
  }
  {
    auto x = vt({2, 3, 4, 5}, -2, 2);
    track("gelu", grad_check<double>([&] { return mean_all(gelu(x)); }, {x},
                                     tape, rng, kGradFd, 12));
    track("sigmoid", grad_check<double>([&] { return mean_all(sigmoid(x)); },
                                        {x}, tape, rng, kGradFd, 12));
  }
  {
    auto x = vt({2, 4, 3, 3}, -1, 1);
    auto g = vt({4}, 0.5, 1.5);
    auto b = vt({4}, -0.5, 0.5);
    track("layer_norm",
          grad_check<double>(
              [&] { return mean_all(layer_norm_channels(x, g, b)); },
              {x, g, b}, tape, rng, kGradFd, 12));
  }
  {
    auto x = vt({1, 3, 6, 8}, -1, 1);
    track("avg_pool2d",
          grad_check<double>([&] { return mean_all(avg_pool2d(x, 2, 2)); },
                             {x}, tape, rng, kGradFd, 12));
    track("global_avg_pool",
          grad_check<double>([&] { return mean_all(global_avg_pool(x)); },
                             {x}, tape, rng, kGradFd, 12));
  }
  {
    auto x = vt({2, 3, 4, 4}, -1, 1);
    auto s = vt({2, 3, 1, 1}, 0.25, 1.75);
    track("channel_scale",
          grad_check<double>([&] { return mean_all(channel_scale(x, s)); },
                             {x, s}, tape, rng, kGradFd, 12));
    auto s1 = vt({1, 3, 1, 1}, 0.25, 1.75);
    track("channel_scale_shared",
          grad_check<double>([&] { return mean_all(channel_scale(x, s1)); },
                             {x, s1}, tape, rng, kGradFd, 12));
  }
  {
    auto a = vt({2, 2, 3, 3}, -1, 1);
    auto b = vt({2, 2, 3, 3}, 0.5, 1.5);
    track("add", grad_check<double>([&] { return mean_all(add(a, b)); },
                                    {a, b}, tape, rng, kGradFd, 12));
    track("sub", grad_check<double>([&] { return mean_all(sub(a, b)); },
                                    {a, b}, tape, rng, kGradFd, 12));
    track("mul", grad_check<double>([&] { return mean_all(mul(a, b)); },
                                    {a, b}, tape, rng, kGradFd, 12));
    track("divide", grad_check<double>([&] { return mean_all(divide(a, b)); },
                                       {a, b}, tape, rng, kGradFd, 12));
    track("scalar_mul",
          grad_check<double>([&] { return mean_all(scalar_mul(a, 1.7)); },
                             {a}, tape, rng, kGradFd, 12));
    track("scalar_add",
          grad_check<double>([&] { return mean_all(scalar_add(a, -0.3)); },
                             {a}, tape, rng, kGradFd, 12));
    track("sum_channels",
          grad_check<double>([&] { return mean_all(sum_channels(a)); }, {a},
                             tape, rng, kGradFd, 12));
    track("mean_all", grad_check<double>([&] { return mean_all(a); }, {a},
                                         tape, rng, kGradFd, 12));
  }
  {
    auto x = vt({1, 2, 4, 4}, 0.05, 0.95);
    track("sqrt_shift",
          grad_check<double>([&] { return mean_all(sqrt_shift(x, 1e-3)); },
                             {x}, tape, rng, kGradFd, 12));
    track("clamp01",
          grad_check<double>([&] { return mean_all(clamp01(x)); }, {x}, tape,
                             rng, kGradFd, 12));
  }
  {  // abs away from the kink
    auto x = Tensor<double>::variable({1, 2, 4, 4}, &tape);
    for (size_t i = 0; i < x.size(); ++i) {
      double mag = rng.uniform(0.2, 1.0);
      x.data()[i] = rng.uniform(0.0, 1.0) < 0.5 ? -mag : mag;
    }
    track("abs_val", grad_check<double>([&] { return mean_all(abs_val(x)); },
                                        {x}, tape, rng, kGradFd, 12));
  }
  {
    auto x = vt({1, 3, 5, 5}, 0.05, 0.95);
    track("srgb_to_lab",
          grad_check<double>(
              [&] { return scalar_mul(mean_all(srgb_to_lab(x)), 0.01); }, {x},
              tape, rng, kGradFd, 12));
  }
  {  // loss surfaces; these are smooth at random interior points, and their
     // O(1) values need a wider step to keep rounding out of the quiet
     // gradient components
    auto pred = vt({1, 2, 12, 12}, 0.1, 0.9);
    auto target = rand_tensor<double>({1, 2, 12, 12}, rng, 0.1, 0.9);
    track("mse_loss",
          grad_check<double>([&] { return mse_loss(pred, target); }, {pred},
                             tape, rng, 1e-5, 12));
    track("ssim_index",
          grad_check<double>([&] { return ssim_index(pred, target); }, {pred},
                             tape, rng, 1e-5, 12));
  }
  {
    // The edge loss is L1 over Sobel-response differences, so inputs are
    // built to keep every difference far from the |.| kink: both fields are
    // quantized to a 1/17 lattice (differences are lattice multiples) and
    // the prediction adds gradient ramps whose Sobel responses (8 * slope)
    // are not lattice multiples. Every difference then has magnitude
    // >= 0.023, far beyond the finite-difference step.
    auto gp = Tensor<double>::variable({1, 2, 12, 12}, &tape);
    auto gt = Tensor<double>::uninit({1, 2, 12, 12});
    for (size_t i = 0; i < gp.size(); ++i) {
      int xcoord = int(i % 12), ycoord = int((i / 12) % 12);
      gp.data()[i] = std::floor(rng.uniform(0.0, 17.999)) / 17.0 +
                     0.0029 * xcoord + 0.0041 * ycoord;
      gt.data()[i] = std::floor(rng.uniform(0.0, 17.999)) / 17.0;
    }
    // In the smooth region the loss is exactly linear, so a wide step has
    // zero truncation error and keeps rounding noise out of the exact-zero
    // gradient components.
    track("gradient_loss",
          grad_check<double>([&] { return gradient_loss(gp, gt); }, {gp},
                             tape, rng, 1e-3, 12));
    auto pred3 = vt({1, 3, 8, 8}, 0.1, 0.9);
    auto target3 = rand_tensor<double>({1, 3, 8, 8}, rng, 0.1, 0.9);
    track("color_loss",
          grad_check<double>([&] { return color_loss(pred3, target3); },
                             {pred3}, tape, rng, 1e-5, 12));
  }
  return worst;
}

// The default loss stack is full of guarded nonsmooth spots: the color
// terms clamp the prediction to [0,1] before the Lab transform, and the
// edge term is L1 over Sobel-response differences. The test point is
// engineered so no finite-difference probe straddles any of them:
//  - biases and weight scales push every model output into roughly
//    [0.2, 0.8], far from the clamp boundaries and the sRGB gamma knee;
//  - the target is the model's own output plus an offset field built from
//    a 1/16 lattice (its Sobel responses land on that lattice) plus x/y
//    ramps whose Sobel responses sit between lattice points, so every
//    L1 difference is either exactly zero or at least ~0.02 in magnitude;
//  - the offset keeps per-pixel distances >= 0.1 in RGB (several Lab
//    units), away from the root's singularity, and the lattice noise
//    gives the target enough local variance for the structural term.
double composed_worst(uint64_t seed) {
  ModelConfig cfg;
  cfg.mod_dim = 4;
  cfg.width = 4;
  cfg.num_blocks = 1;
  cfg.guide_size = 25;
  cfg.proj_width = 4;
  cfg.enc_width1 = 2;
  cfg.enc_width2 = 2;

  Tape<double> tape;
  Rng rng(Rng::mix(seed, 0x636du));
  auto params = init_isp<double>(cfg, seed, &tape);
  visit_params<double>(params, [&](const std::string& nm, Tensor<double>& t) {
    if (nm == "blocks.0.alpha" || nm == "blocks.0.beta") {
      // Residual branches initialize to zero scale; a dead branch would
      // leave its parameters out of the check entirely.
      for (size_t i = 0; i < t.size(); ++i) {
        double mag = rng.uniform(0.2, 0.4);
        t.data()[i] = rng.uniform(0.0, 1.0) < 0.5 ? -mag : mag;
      }
    } else if (nm == "cmod.enc3.b") {
      for (size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(0.6, 1.2);
    } else if (nm == "cmod.enc1.b" || nm == "cmod.enc2.b") {
      for (size_t i = 0; i < t.size(); ++i)
        t.data()[i] = rng.uniform(-0.1, 0.1);
    } else if (nm == "cmod.out2.b") {
      for (size_t i = 0; i < t.size(); ++i)
        t.data()[i] = 0.35 + rng.uniform(-0.05, 0.05);
    } else if (nm == "cmod.out2.w" || nm == "tail.w") {
      for (size_t i = 0; i < t.size(); ++i) t.data()[i] *= 0.5;
    } else if (nm == "tail.b") {
      for (size_t i = 0; i < t.size(); ++i)
        t.data()[i] = rng.uniform(-0.02, 0.02);
    }
  });
  auto x = rand_var<double>({1, 3, 12, 12}, rng, 0.1, 0.9, &tape);
  auto guide = rand_var<double>({1, 4, 25, 25}, rng, 0.0, 1.0, &tape);
  Tensor<double> target;
  {
    NoGradGuard<double> ng(&tape);
    auto probe = isp_forward_patch(params, x, guide);
    target = Tensor<double>::uninit({1, 3, 12, 12});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 12; ++y)
        for (int xx = 0; xx < 12; ++xx) {
          size_t k = (size_t(c) * 12 + y) * 12 + xx;
          double gap =
              std::max(0.0, probe.y_c.data()[k] - probe.rgb.data()[k]);
          double off = 0.1 + 0.0625 * std::ceil(16.0 * gap) +
                       0.0625 * std::floor(rng.uniform(0.0, 5.999)) +
                       0.0039 * xx + 0.0026 * y;
          target.data()[k] = probe.rgb.data()[k] + off;
        }
  }
  LossWeights w;

  std::vector<Tensor<double>> wrt = {x, guide};
  visit_params<double>(params,
                       [&](const std::string&, Tensor<double>& t) {
                         wrt.push_back(t);
                       });
  auto forward = [&] {
    auto out = isp_forward_patch(params, x, guide);
    return total_loss(out, target, w).total;
  };
  auto r = grad_check<double>(forward, wrt, tape, rng, kComposedFd, 2);
  return r.max_rel;
}

Result criterion1() {
  auto t0 = Clock::now();
  double worst_op = 0, worst_composed = 0;
  std::string worst_name = "none";
  for (uint64_t seed = 1; seed <= kGradSeeds; ++seed) {
    std::string name;
    double w = op_suite_worst(seed, name);
    if (w > worst_op) {
      worst_op = w;
      worst_name = name;
    }
    worst_composed = std::max(worst_composed, composed_worst(seed));
  }
  double el = seconds_since(t0);
  Result r;
  r.pass = worst_op <= kPerOpTol && worst_composed <= kComposedTol &&
           el <= kGradBudgetSec;
  std::ostringstream ss;
  ss << "per-op max rel " << worst_op << " (" << worst_name << ", tol "
     << kPerOpTol << "), composed max rel " << worst_composed << " (tol "
     << kComposedTol << "), " << kGradSeeds << " seeds, " << fmt(el, 1)
     << " s (budget " << fmt(kGradBudgetSec, 0) << " s)";
  r.detail = ss.str();
  return r;
}

// ---------------------------------------------------------------------------
// Criterion 2: full-image vs patch guide ablation.
//   32 scenes, 512x512, patch 128, 2000 steps per model, identical configs
//   differing only in guide_mode; full-image guide wins by >= 1.0 dB PSNR
//   AND >= 1.0 mean dE00 on >= 2 of 3 seeds; total runtime <= 45 min.

constexpr int kAblScenes = 32;
constexpr int kAblSceneSize = 512;
constexpr int kAblPatch = 128;
constexpr long kAblSteps = 2000;
constexpr double kAblPsnrGap = 1.0;
constexpr double kAblDeGap = 1.0;
constexpr double kAblBudgetSec = 45.0 * 60.0;

LoadedDataset ablation_dataset(uint64_t seed) {
  std::vector<ScenePair> scenes;
  scenes.reserve(kAblScenes);
  for (int i = 0; i < kAblScenes; ++i) {
    SceneParams params;  // random gains, default CCM, sRGB on, no noise
    scenes.push_back(synth_scene_generate(Rng::mix(seed, 1000 + uint64_t(i)),
                                          kAblSceneSize, kAblSceneSize,
                                          params));
    scenes.back().scene_id = "abl_" + std::to_string(i);
  }
  std::vector<int> order(scenes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  Rng split_rng(Rng::mix(seed, 0x53504cu));
  split_rng.shuffle(order);
  std::vector<bool> is_test(scenes.size(), false);
  for (int k = 0; k < 3; ++k) is_test[size_t(order[size_t(k)])] = true;
  // Patch guides top out at the packed patch resolution (64 here); the
  // scene guide uses the same size so the two modes differ only in what
  // the guide shows, not how much of it.
  return assemble_dataset(scenes, is_test, kAblPatch, kAblPatch, 64, 64, 0.5);
}

struct AblationRun {
  double psnr = 0, de00 = 0;
};

AblationRun ablation_train(const LoadedDataset& data, uint64_t seed,
                           GuideMode mode) {
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.decay_every_epochs = 0;
  cfg.batch_size = 1;
  cfg.seed = seed;
  cfg.guide_mode = mode;
  cfg.grad_clip = 1.0;
  cfg.max_steps = kAblSteps;
  long spe = long(data.train.size());
  cfg.epochs = int(kAblSteps / spe) + 1;
  Trainer tr(ModelConfig{}, cfg);
  tr.run(data);
  EvalResult ev = tr.evaluate(data, mode);
  return {ev.psnr, ev.de00};
}

Result criterion2() {
  auto t0 = Clock::now();
  int passes = 0, fails = 0;
  std::ostringstream per_seed;
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    auto data = ablation_dataset(seed);
    std::cerr << "[criterion 2] seed " << seed << ": " << data.train.size()
              << " train / " << data.test.size() << " test patches"
              << std::endl;
    AblationRun full = ablation_train(data, seed, GuideMode::kFullImage);
    std::cerr << "[criterion 2] seed " << seed << " full-guide: psnr "
              << fmt(full.psnr) << " de00 " << fmt(full.de00) << " ("
              << fmt(seconds_since(t0), 0) << " s)" << std::endl;
    AblationRun patch = ablation_train(data, seed, GuideMode::kPatch);
    std::cerr << "[criterion 2] seed " << seed << " patch-guide: psnr "
              << fmt(patch.psnr) << " de00 " << fmt(patch.de00) << " ("
              << fmt(seconds_since(t0), 0) << " s)" << std::endl;
    double dpsnr = full.psnr - patch.psnr;
    double dde = patch.de00 - full.de00;
    bool ok = dpsnr >= kAblPsnrGap && dde >= kAblDeGap;
    passes += ok ? 1 : 0;
    fails += ok ? 0 : 1;
    per_seed << " s" << seed << "[+" << fmt(dpsnr, 2) << " dB, -"
             << fmt(dde, 2) << " dE00 " << (ok ? "ok" : "MISS") << "]";
    if (passes >= 2 || fails >= 2) break;
  }
  double el = seconds_since(t0);
  Result r;
  r.pass = passes >= 2 && el <= kAblBudgetSec;
  std::ostringstream ss;
  ss << passes << " of 3 seeds hit (+" << fmt(kAblPsnrGap, 1) << " dB and -"
     << fmt(kAblDeGap, 1) << " dE00):" << per_seed.str() << ", "
     << fmt(el, 0) << " s (budget " << fmt(kAblBudgetSec, 0) << " s)";
  r.detail = ss.str();
  return r;
}

// ---------------------------------------------------------------------------
// Criterion 3: CMod expressivity.
//   (a) hand-built weights realize gains (2.0, 1.0, 1.5) within 1e-5;
//   (b) the color module alone, trained with the reconstruction identity,
//       reaches mean dE76 <= 2.0 on held-out white-balance-only scenes
//       within 1000 steps.

constexpr float kGainTol = 1e-5f;
constexpr double kDe76Target = 2.0;
constexpr long kCmodSteps = 1000;

float hand_gain_error() {
  ModelConfig cfg;
  cfg.mod_dim = 3;
  cfg.proj_width = 6;
  cfg.enc_width1 = 2;
  cfg.enc_width2 = 2;
  cfg.guide_size = 25;
  Tape<float> tape;
  Rng rng(11);
  auto p = init_cmod<float>(cfg, rng, &tape);
  NoGradGuard<float> ng(&tape);

  const float gains[3] = {2.0f, 1.0f, 1.5f};
  // Each signed pair of GELU lanes carries one channel through the
  // activation unchanged: gelu(x) - gelu(-x) = x.
  auto pair_lift = [](ConvLayer<float>& lift, ConvLayer<float>& merge) {
    lift.w.fill(0.0f);
    lift.b.fill(0.0f);
    merge.w.fill(0.0f);
    merge.b.fill(0.0f);
    for (int c = 0; c < 3; ++c) {
      lift.w.data()[(2 * c) * 3 + c] = 1.0f;
      lift.w.data()[(2 * c + 1) * 3 + c] = -1.0f;
      merge.w.data()[c * 6 + 2 * c] = 1.0f;
      merge.w.data()[c * 6 + 2 * c + 1] = -1.0f;
    }
  };
  pair_lift(p.in1, p.in2);
  pair_lift(p.out1, p.out2);
  p.enc1.w.fill(0.0f);
  p.enc1.b.fill(0.0f);
  p.enc2.w.fill(0.0f);
  p.enc2.b.fill(0.0f);
  p.enc3.w.fill(0.0f);
  for (int c = 0; c < 3; ++c) p.enc3.b.data()[c] = gains[c];

  Rng drng(13);
  auto x = rand_tensor<float>({1, 3, 16, 16}, drng, 0.0f, 1.0f);
  auto guide = rand_tensor<float>({1, 4, 25, 25}, drng, 0.0f, 1.0f);
  auto y = cmod_forward(p, x, guide);
  float worst = 0.0f;
  for (int c = 0; c < 3; ++c)
    for (int h = 0; h < 16; ++h)
      for (int w = 0; w < 16; ++w)
        worst = std::max(worst, std::abs(y.at({0, c, h, w}) -
                                         gains[c] * x.at({0, c, h, w})));
  return worst;
}

LoadedDataset wb_only_dataset(uint64_t seed, int n_train, int n_test) {
  std::vector<ScenePair> scenes;
  std::vector<bool> is_test;
  for (int i = 0; i < n_train + n_test; ++i) {
    SceneParams p;
    p.ccm = kIdentityCcm;
    p.srgb_gamma = false;  // gains are the only thing left to undo
    scenes.push_back(
        synth_scene_generate(Rng::mix(seed, 2000 + uint64_t(i)), 256, 256, p));
    scenes.back().scene_id = "wb_" + std::to_string(i);
    is_test.push_back(i >= n_train);
  }
  return assemble_dataset(scenes, is_test, 128, 128, 64, 128, 0.5);
}

Result criterion3() {
  auto t0 = Clock::now();
  float gain_err = hand_gain_error();

  auto data = wb_only_dataset(1, 24, 6);
  TrainConfig cfg;
  cfg.lr = 2e-3;
  cfg.decay_every_epochs = 0;
  cfg.batch_size = 4;
  cfg.seed = 1;
  cfg.cmod_only = true;
  long spe = long(data.train.size()) / cfg.batch_size;
  cfg.epochs = int((kCmodSteps + spe - 1) / spe);
  cfg.max_steps = kCmodSteps;
  Trainer tr(ModelConfig{}, cfg);

  double best_de76 = 1e9;
  long best_step = 0;
  while (tr.step() < kCmodSteps) {
    tr.train_epoch(data);
    EvalResult ev = tr.evaluate(data);
    if (ev.de76 < best_de76) {
      best_de76 = ev.de76;
      best_step = tr.step();
    }
    std::cerr << "[criterion 3] step " << tr.step() << " held-out dE76 "
              << fmt(ev.de76) << std::endl;
    if (best_de76 <= kDe76Target) break;
  }
  double el = seconds_since(t0);
  Result r;
  r.pass = gain_err <= kGainTol && best_de76 <= kDe76Target;
  std::ostringstream ss;
  ss << "hand-built gains max err " << gain_err << " (tol " << kGainTol
     << "); trained color module held-out dE76 " << fmt(best_de76)
     << " at step " << best_step << " (target <= " << fmt(kDe76Target, 1)
     << " within " << kCmodSteps << "), " << fmt(el, 0) << " s";
  r.detail = ss.str();
  return r;
}

// ---------------------------------------------------------------------------
// Criterion 4: overfit sanity.
//   Full default model memorizes 8 fixed patches to training PSNR >= 35 dB
//   within 2000 Adam steps at lr 1e-4.

constexpr double kOverfitPsnr = 35.0;
constexpr long kOverfitSteps = 2000;

Result criterion4() {
  auto t0 = Clock::now();
  // Two clean scenes, four 64x64 patches each; the same 8 patches serve as
  // the training batch and the measurement set.
  std::vector<ScenePair> scenes;
  std::vector<bool> is_test;
  for (int i = 0; i < 2; ++i) {
    SceneParams p;
    scenes.push_back(
        synth_scene_generate(Rng::mix(7, 3000 + uint64_t(i)), 256, 256, p));
    scenes.back().scene_id = "fit_" + std::to_string(i);
    is_test.push_back(false);
  }
  auto data = assemble_dataset(scenes, is_test, 64, 128, 32, 64, -1.0, 4);
  data.test = data.train;  // training PSNR is measured on the same patches

  TrainConfig cfg;
  cfg.lr = 1e-4;  // pinned by the criterion
  cfg.decay_every_epochs = 0;
  cfg.batch_size = 8;
  cfg.seed = 3;
  cfg.epochs = int(kOverfitSteps);  // one batch per epoch
  cfg.max_steps = kOverfitSteps;
  // Memorization is measured in PSNR, so train on the matching objective.
  cfg.weights = LossWeights{1.0, 0.0, 0.0, 0.0, 0.0};
  Trainer tr(ModelConfig{}, cfg);

  double best = 0;
  long best_step = 0;
  while (tr.step() < kOverfitSteps) {
    tr.train_epoch(data);
    if (tr.step() % 50 != 0 && tr.step() < kOverfitSteps) continue;
    EvalResult ev = tr.evaluate(data);
    if (ev.psnr > best) {
      best = ev.psnr;
      best_step = tr.step();
    }
    if (tr.step() % 250 == 0)
      std::cerr << "[criterion 4] step " << tr.step() << " train psnr "
                << fmt(ev.psnr, 2) << std::endl;
    if (best >= kOverfitPsnr) break;
  }
  double el = seconds_since(t0);
  Result r;
  r.pass = best >= kOverfitPsnr;
  std::ostringstream ss;
  ss << "training psnr " << fmt(best, 2) << " dB at step " << best_step
     << " (target >= " << fmt(kOverfitPsnr, 0) << " within " << kOverfitSteps
     << " steps, lr 1e-4), " << fmt(el, 0) << " s";
  r.detail = ss.str();
  return r;
}

// ---------------------------------------------------------------------------
// Criterion 5: parameter and MAC accounting.
//   default params in [45e3, 85e3]; per-layer MACs equal the closed
//   formula; full-model MACs at 448x448 within +-30% of 8.42e9.

constexpr double kMacCenter = 8.42e9;
constexpr double kMacSlack = 0.30;

Result criterion5() {
  ModelConfig cfg;
  Tape<float> tape;
  auto params = init_isp<float>(cfg, 1, &tape);
  size_t n_params = count_params(params);

  auto report = count_macs(cfg, 448, 448);
  auto lookup = [&report](const std::string& name) -> uint64_t {
    for (const auto& e : report.entries)
      if (e.name == name) return e.macs;
    return 0;
  };
  // One multiply-accumulate per kernel tap per output element, written out
  // independently of the library's counter.
  auto closed = [](uint64_t cout, uint64_t cin, uint64_t groups, uint64_t kh,
                   uint64_t kw, uint64_t oh, uint64_t ow) {
    return cout * (cin / groups) * kh * kw * oh * ow;
  };
  bool layers_ok = true;
  std::string bad;
  auto expect_layer = [&](const std::string& name, uint64_t want) {
    if (lookup(name) != want) {
      layers_ok = false;
      if (bad.empty())
        bad = name + " got " + std::to_string(lookup(name)) + " want " +
              std::to_string(want);
    }
  };
  // Single-layer counter vs the closed formula across the kernel shapes
  // the model actually uses.
  if (conv_macs(32, 3, 1, 3, 3, 448, 448) != closed(32, 3, 1, 3, 3, 448, 448) ||
      conv_macs(64, 64, 64, 3, 3, 10, 12) != closed(64, 64, 64, 3, 3, 10, 12) ||
      conv_macs(16, 4, 1, 7, 7, 61, 61) != closed(16, 4, 1, 7, 7, 61, 61) ||
      conv_macs(6, 4, 2, 5, 5, 9, 9) != closed(6, 4, 2, 5, 5, 9, 9)) {
    layers_ok = false;
    bad = "conv_macs disagrees with the closed formula";
  }
  // Encoder spatial chain at guide 128: conv7 s2 -> 61, pool2 -> 30,
  // conv5 s2 -> 13.
  expect_layer("cmod.in1", closed(32, 3, 1, 1, 1, 448, 448));
  expect_layer("cmod.in2", closed(64, 32, 1, 1, 1, 448, 448));
  expect_layer("cmod.enc1", closed(16, 4, 1, 7, 7, 61, 61));
  expect_layer("cmod.enc2", closed(32, 16, 1, 5, 5, 13, 13));
  expect_layer("cmod.enc3", closed(64, 32, 1, 1, 1, 1, 1));
  expect_layer("cmod.out1", closed(32, 64, 1, 1, 1, 448, 448));
  expect_layer("cmod.out2", closed(3, 32, 1, 1, 1, 448, 448));
  expect_layer("head", closed(32, 3, 1, 3, 3, 448, 448));
  expect_layer("tail", closed(3, 32, 1, 3, 3, 448, 448));
  expect_layer("blocks.0.dw", closed(64, 64, 64, 3, 3, 448, 448));
  expect_layer("blocks.2.ffn2", closed(32, 64, 1, 1, 1, 448, 448));

  uint64_t sum = 0;
  for (const auto& e : report.entries) sum += e.macs;
  bool total_ok = sum == report.total;
  double rel = std::abs(double(report.total) - kMacCenter) / kMacCenter;

  Result r;
  r.pass = n_params >= 45000 && n_params <= 85000 && layers_ok && total_ok &&
           rel <= kMacSlack;
  std::ostringstream ss;
  ss << "params " << n_params << " (bounds [45e3, 85e3]); layer MACs "
     << (layers_ok ? "exact" : ("WRONG: " + bad)) << "; total "
     << fmt(double(report.total) / 1e9, 3) << " G vs 8.42 G ("
     << fmt(100 * rel, 1) << "% off, slack 30%)";
  r.detail = ss.str();
  return r;
}

// ---------------------------------------------------------------------------
// Criterion 6: metric oracles.
//   SSIM(x,x) = 1 within 1e-9; PSNR of a 0.01-MSE pair = 20.000 within
//   1e-5; dE00 matches an independent reference implementation on 10
//   derived pairs within 1e-3; Lab anchors within 0.01.

namespace de00ref {

double cosd(double d) { return std::cos(d * std::numbers::pi / 180.0); }
double sind(double d) { return std::sin(d * std::numbers::pi / 180.0); }

// Independent CIEDE2000 written in the degree form of the published
// formulation (the library computes in radians).
double de00(const double x[3], const double y[3]) {
  const double p257 = std::pow(25.0, 7.0);
  double C1 = std::hypot(x[1], x[2]);
  double C2 = std::hypot(y[1], y[2]);
  double Cab = 0.5 * (C1 + C2);
  double Cab7 = std::pow(Cab, 7.0);
  double G = 0.5 * (1.0 - std::sqrt(Cab7 / (Cab7 + p257)));
  double ap1 = (1.0 + G) * x[1], ap2 = (1.0 + G) * y[1];
  double Cp1 = std::hypot(ap1, x[2]);
  double Cp2 = std::hypot(ap2, y[2]);
  auto hp = [](double a, double b) {
    if (a == 0.0 && b == 0.0) return 0.0;
    double h = std::atan2(b, a) * 180.0 / std::numbers::pi;
    return h < 0.0 ? h + 360.0 : h;
  };
  double hp1 = hp(ap1, x[2]), hp2 = hp(ap2, y[2]);
  double dL = y[0] - x[0];
  double dC = Cp2 - Cp1;
  double dh;
  if (Cp1 * Cp2 == 0.0)
    dh = 0.0;
  else if (std::abs(hp2 - hp1) <= 180.0)
    dh = hp2 - hp1;
  else if (hp2 - hp1 > 180.0)
    dh = hp2 - hp1 - 360.0;
  else
    dh = hp2 - hp1 + 360.0;
  double dH = 2.0 * std::sqrt(Cp1 * Cp2) * sind(0.5 * dh);
  double Lbar = 0.5 * (x[0] + y[0]);
  double Cbar = 0.5 * (Cp1 + Cp2);
  double hbar;
  if (Cp1 * Cp2 == 0.0)
    hbar = hp1 + hp2;
  else if (std::abs(hp1 - hp2) <= 180.0)
    hbar = 0.5 * (hp1 + hp2);
  else if (hp1 + hp2 < 360.0)
    hbar = 0.5 * (hp1 + hp2 + 360.0);
  else
    hbar = 0.5 * (hp1 + hp2 - 360.0);
  double Tt = 1.0 - 0.17 * cosd(hbar - 30.0) + 0.24 * cosd(2.0 * hbar) +
              0.32 * cosd(3.0 * hbar + 6.0) - 0.20 * cosd(4.0 * hbar - 63.0);
  double dtheta = 30.0 * std::exp(-std::pow((hbar - 275.0) / 25.0, 2.0));
  double Cbar7 = std::pow(Cbar, 7.0);
  double Rc = 2.0 * std::sqrt(Cbar7 / (Cbar7 + p257));
  double Sl = 1.0 + 0.015 * std::pow(Lbar - 50.0, 2.0) /
                        std::sqrt(20.0 + std::pow(Lbar - 50.0, 2.0));
  double Sc = 1.0 + 0.045 * Cbar;
  double Sh = 1.0 + 0.015 * Cbar * Tt;
  double Rt = -sind(2.0 * dtheta) * Rc;
  double tl = dL / Sl, tc = dC / Sc, th = dH / Sh;
  return std::sqrt(tl * tl + tc * tc + th * th + Rt * tc * th);
}

}  // namespace de00ref

Result criterion6() {
  constexpr double kSsimTol = 1e-9;
  constexpr double kPsnrTol = 1e-5;
  constexpr double kDe00Tol = 1e-3;
  constexpr double kLabTol = 0.01;

  Rng rng(5);
  auto x = rand_tensor<float>({1, 3, 16, 16}, rng, 0.0f, 1.0f);
  double ssim_err = std::abs(double(ssim_index(x, x).item()) - 1.0);

  auto pred = Tensor<float>::full({3, 8, 8}, 0.55f);
  auto target = Tensor<float>::full({3, 8, 8}, 0.45f);
  double psnr_err = std::abs(psnr_metric(pred, target) - 20.0);

  // Derived pairs exercising the gray axis, hue wraparound, and the
  // small-chroma hue discontinuity.
  const double pairs[10][6] = {
      {50.0, 2.6772, -79.7751, 50.0, 0.0, -82.7485},
      {50.0, 3.1571, -77.2803, 50.0, 0.0, -82.7485},
      {50.0, 2.8361, -74.0200, 50.0, 0.0, -82.7485},
      {50.0, -1.3802, -84.2814, 50.0, 0.0, -82.7485},
      {50.0, 0.0, 0.0, 50.0, -1.0, 2.0},
      {50.0, 2.49, -0.001, 50.0, -2.49, 0.0009},
      {50.0, 2.49, -0.001, 50.0, -2.49, 0.0011},
      {50.0, -0.001, 2.49, 50.0, 0.001, -2.49},
      {60.2574, -34.0099, 36.2677, 60.4626, -34.1751, 39.4387},
      {63.0109, -31.0961, -5.8663, 62.8187, -29.7946, -4.0864},
  };
  double de_err = 0;
  for (const auto& p : pairs) {
    const double a[3] = {p[0], p[1], p[2]};
    const double b[3] = {p[3], p[4], p[5]};
    de_err = std::max(de_err, std::abs(ciede2000(a, b) - de00ref::de00(a, b)));
  }

  double lab_err = 0;
  const double anchors[3][4] = {
      // input gray value, expected L*, a*, b*
      {1.0, 100.0, 0.0, 0.0},
      {0.0, 0.0, 0.0, 0.0},
      {0.5, 53.3890, 0.0, 0.0},
  };
  for (const auto& a : anchors) {
    double rgb[3] = {a[0], a[0], a[0]};
    double lab[3];
    srgb_to_lab_scalar(rgb, lab);
    lab_err = std::max({lab_err, std::abs(lab[0] - a[1]),
                        std::abs(lab[1] - a[2]), std::abs(lab[2] - a[3])});
  }

  Result r;
  r.pass = ssim_err <= kSsimTol && psnr_err <= kPsnrTol &&
           de_err <= kDe00Tol && lab_err <= kLabTol;
  std::ostringstream ss;
  ss << "ssim self-err " << ssim_err << " (tol 1e-9); psnr 0.01-MSE err "
     << psnr_err << " (tol 1e-5); de00 vs reference max " << de_err
     << " over 10 pairs (tol 1e-3); Lab anchors max " << fmt(lab_err, 5)
     << " (tol 0.01)";
  r.detail = ss.str();
  return r;
}

// ---------------------------------------------------------------------------
// Criterion 7: tiled vs whole-image full-resolution inference.
//   1024x1024 synthetic RAW, tile 256 / overlap 32 vs one pass: RMS <=
//   1e-5 over pixels >= 16 px from any tile seam; the modification vector
//   is computed once from the full frame by construction of the tiled
//   path (both passes share the same whole-frame guide).

constexpr double kTileRms = 1e-5;
constexpr int kTileSize = 256;
constexpr int kTileOverlap = 32;
constexpr int kSeamMargin = 16;

Result criterion7() {
  auto t0 = Clock::now();
  SceneParams sp;
  auto scene = synth_scene_generate(29, 1024, 1024, sp);

  ModelConfig cfg;
  Tape<float> tape;
  auto params = init_isp<float>(cfg, 17, &tape);
  // The residual branches initialize to zero scale (identity blocks);
  // turning them on makes every code path contribute to the comparison.
  for (auto& blk : params.blocks) {
    blk.alpha.fill(0.35f);
    blk.beta.fill(0.25f);
  }

  auto whole = isp_forward_fullres(params, scene.raw, 0);
  auto tiled = isp_forward_fullres(params, scene.raw, kTileSize, kTileOverlap);

  const int H = 1024, W = 1024;
  auto seam_dist = [](int v) {
    int best = 1 << 30;
    for (int s = kTileSize; s < 1024; s += kTileSize)
      best = std::min(best, std::abs(v - s));
    return best;
  };
  double acc = 0, acc_all = 0;
  long n = 0;
  double worst = 0;
  for (int y = 0; y < H; ++y) {
    bool y_ok = seam_dist(y) >= kSeamMargin;
    for (int x = 0; x < W; ++x) {
      bool in_mask = y_ok && seam_dist(x) >= kSeamMargin;
      for (int c = 0; c < 3; ++c) {
        size_t idx = (size_t(c) * H + y) * W + x;
        double d = double(whole.data()[idx]) - double(tiled.data()[idx]);
        acc_all += d * d;
        if (!in_mask) continue;
        acc += d * d;
        worst = std::max(worst, std::abs(d));
        ++n;
      }
    }
  }
  double rms = std::sqrt(acc / double(n));
  double rms_all = std::sqrt(acc_all / double(3 * H * W));
  double el = seconds_since(t0);

  Result r;
  r.pass = rms <= kTileRms;
  std::ostringstream ss;
  ss << "seam-masked RMS " << rms << " (tol 1e-5, margin " << kSeamMargin
     << " px, max abs " << worst << "), all-pixel RMS " << rms_all
     << ", tile " << kTileSize << " overlap " << kTileOverlap << ", "
     << fmt(el, 0) << " s";
  r.detail = ss.str();
  return r;
}

// ---------------------------------------------------------------------------
// Criterion 8: determinism and persistence.
//   Same seed -> byte-identical checkpoints after 10 steps; stop/resume
//   matches the uninterrupted run bit-exactly; save/load/save roundtrips
//   byte-identically.

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Result criterion8() {
  namespace fs = std::filesystem;
  auto t0 = Clock::now();

  // Ten 64x64 items over two synthetic scenes; batch 2 gives 5 steps per
  // epoch, so 10 steps is exactly two epochs.
  std::vector<ScenePair> scenes;
  std::vector<bool> is_test;
  for (int i = 0; i < 2; ++i) {
    SceneParams p;
    scenes.push_back(
        synth_scene_generate(Rng::mix(31, 4000 + uint64_t(i)), 256, 256, p));
    scenes.back().scene_id = "det_" + std::to_string(i);
    is_test.push_back(false);
  }
  auto data = assemble_dataset(scenes, is_test, 64, 64, 25, 64, -1.0, 5);

  auto cfg_for = [](int epochs) {
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.decay_every_epochs = 0;
    cfg.batch_size = 2;
    cfg.seed = 21;
    cfg.epochs = epochs;
    return cfg;
  };
  auto tmp = [](const char* name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove(p);
    return p;
  };

  Trainer a(ModelConfig{}, cfg_for(2));
  Trainer b(ModelConfig{}, cfg_for(2));
  a.run(data);
  b.run(data);
  bool steps_ok = a.step() == 10 && b.step() == 10;
  auto pa = tmp("ctxisp_acc8_a.bin"), pb = tmp("ctxisp_acc8_b.bin");
  a.save(pa.string());
  b.save(pb.string());
  bool same_seed_identical = file_bytes(pa) == file_bytes(pb);

  // Stop after one epoch, reload into a fresh trainer, finish.
  Trainer half(ModelConfig{}, cfg_for(1));
  half.run(data);
  auto ph = tmp("ctxisp_acc8_half.bin");
  half.save(ph.string());
  Trainer resumed(ModelConfig{}, cfg_for(2));
  resumed.load(ph.string());
  resumed.run(data);
  auto pr = tmp("ctxisp_acc8_resumed.bin");
  resumed.save(pr.string());
  bool resume_identical = file_bytes(pr) == file_bytes(pa);

  // Load/save roundtrip writes the same bytes.
  Trainer copy(ModelConfig{}, cfg_for(2));
  copy.load(pa.string());
  auto pc = tmp("ctxisp_acc8_copy.bin");
  copy.save(pc.string());
  bool roundtrip_identical = file_bytes(pc) == file_bytes(pa);

  fs::remove(pa), fs::remove(pb), fs::remove(ph), fs::remove(pr),
      fs::remove(pc);
  double el = seconds_since(t0);

  Result r;
  r.pass = steps_ok && same_seed_identical && resume_identical &&
           roundtrip_identical;
  std::ostringstream ss;
  ss << "10-step same-seed checkpoints "
     << (same_seed_identical ? "byte-identical" : "DIFFER")
     << "; stop/resume vs uninterrupted "
     << (resume_identical ? "byte-identical" : "DIFFER")
     << "; load/save roundtrip "
     << (roundtrip_identical ? "byte-identical" : "DIFFER") << ", "
     << fmt(el, 0) << " s";
  r.detail = ss.str();
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--criterion" && i + 1 < argc) {
      only = std::atoi(argv[i + 1]);
      ++i;
    } else {
      std::cerr << "usage: ctxisp_acceptance [--criterion N]" << std::endl;
      return 2;
    }
  }
  if (only < 0 || only > 8) {
    std::cerr << "criterion must be 1..8" << std::endl;
    return 2;
  }

  Result (*criteria[8])() = {criterion1, criterion2, criterion3, criterion4,
                             criterion5, criterion6, criterion7, criterion8};
  bool all_pass = true;
  for (int n = 1; n <= 8; ++n) {
    if (only != 0 && n != only) continue;
    Result r;
    try {
      r = criteria[n - 1]();
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("exception: ") + e.what();
    }
    std::cout << "CRITERION " << n << (r.pass ? " PASS: " : " FAIL: ")
              << r.detail << std::endl;
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 1;
}
