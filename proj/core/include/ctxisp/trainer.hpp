// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "ctxisp/dataset.hpp"
#include "ctxisp/losses.hpp"
#include "ctxisp/model.hpp"
#include "ctxisp/rng.hpp"

namespace ctxisp {

enum class GuideMode { kFullImage, kPatch };

struct TrainConfig {
  double lr = 1e-4;
  double decay_factor = 0.5;
  int decay_every_epochs = 40;  // 0 disables the schedule
  int epochs = 30;
  int batch_size = 4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  LossWeights weights;
  GuideMode guide_mode = GuideMode::kFullImage;
  int eval_every = 0;     // epochs between mid-run evals; 0 = none
  double grad_clip = 0.0; // global-norm threshold; 0 disables
  long max_steps = 0;     // hard step cap across epochs; 0 = epochs only
  bool cmod_only = false; // color module alone, reconstruction = identity

  void validate() const;
};

// lr * decay_factor^floor(epoch / decay_every_epochs).
double lr_schedule(int epoch, const TrainConfig& cfg);

// Reads only the model-configuration snapshot from a checkpoint, so a
// Trainer with matching shapes can be constructed before load().
ModelConfig checkpoint_model_config(const std::string& path);

// One bias-corrected Adam update on a single parameter tensor. t is the
// 1-based global step count. grad is multiplied by grad_scale before the
// moment update (global-norm clipping hook); a non-finite scaled gradient
// aborts, naming the parameter.
void adam_step(Tensor<float>& param, const float* grad, Tensor<float>& m,
               Tensor<float>& v, long t, double lr_t, double beta1,
               double beta2, double eps, double grad_scale = 1.0,
               const std::string& name = "param");

struct EvalRow {
  std::string image_id;
  double psnr = 0, ssim = 0, de00 = 0, de76 = 0;
};

struct EvalResult {
  std::vector<EvalRow> rows;  // sorted by image_id
  double psnr = 0, ssim = 0, de00 = 0, de76 = 0;  // means over rows
};

// Tab-delimited report with a header row and a trailing "mean" row.
void write_metric_report(std::ostream& os, const EvalResult& r);

struct EpochStats {
  int epoch = 0;
  long steps = 0;
  double lr = 0;
  // Means over the epoch's steps.
  double total = 0, mse = 0, ssim = 0, grad = 0, color_final = 0,
         color_cmod = 0;
  double grad_norm = 0;  // mean pre-clip global gradient L2 norm
  double seconds = 0;
};

// Owns the model parameters, the tape, and the Adam state. The whole
// trajectory is a pure function of (model config, train config, data):
// batch order for epoch e is a fresh shuffle seeded from (seed, e), so
// resuming from a checkpoint needs no mid-stream RNG surgery.
class Trainer {
 public:
  Trainer(const ModelConfig& mcfg, const TrainConfig& tcfg);

  // Runs until the epoch boundary (or a max_steps / resume offset cut).
  EpochStats train_epoch(const LoadedDataset& data);

  // Full loop honoring epochs and max_steps. Appends one tab-delimited
  // row per epoch to log when given. Returns the global step count.
  long run(const LoadedDataset& data, std::ostream* log = nullptr);

  // Metrics over the test split, one row per patch.
  EvalResult evaluate(const LoadedDataset& data, GuideMode mode);
  EvalResult evaluate(const LoadedDataset& data) {
    return evaluate(data, GuideMode::kFullImage);
  }

  void save(const std::string& path);
  void load(const std::string& path);

  IspParams<float>& params() { return params_; }
  const ModelConfig& model_config() const { return mcfg_; }
  const TrainConfig& train_config() const { return tcfg_; }
  long step() const { return step_; }
  int epoch() const { return epoch_; }

 private:
  long steps_per_epoch(const LoadedDataset& data) const;
  IspOutput<float> forward(const Tensor<float>& x, const Tensor<float>& guide);
  void step_once(const LoadedDataset& data, const std::vector<int>& order,
                 long batch, int epoch, EpochStats& st);

  ModelConfig mcfg_;
  TrainConfig tcfg_;
  Tape<float> tape_;
  IspParams<float> params_;
  std::map<std::string, Tensor<float>> adam_m_, adam_v_;
  long step_ = 0;
  int epoch_ = 0;
  Rng rng_;
};

}  // namespace ctxisp
