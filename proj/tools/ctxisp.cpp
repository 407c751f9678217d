// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Subcommands:
//   prep-synth  render a synthetic RAW/RGB dataset and write its manifest
//   train       train a model from a manifest, with periodic checkpoints
//   eval        metric table for a checkpoint over a manifest's test split
//   infer       full-resolution RAW -> RGB inference
//   gradcheck   finite-difference audit of every differentiable op
//   stats       parameter and MAC accounting for a model configuration
//
// Every subcommand accepts --config FILE, a plain key=value overlay for
// its own flags; precedence is flags > file > defaults and unknown keys
// are rejected. Each run first echoes its fully resolved configuration as
// '# key=value' lines, so any result can be reproduced from its output
// alone. Tables on stdout are tab-delimited with a header row.
//
// Exit codes: 0 success, 2 usage (bad flags, bad config keys, argument
// precondition failures), 1 runtime failure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "ctxisp/cmod.hpp"
#include "ctxisp/dataset.hpp"
#include "ctxisp/image_io.hpp"
#include "ctxisp/losses.hpp"
#include "ctxisp/model.hpp"
#include "ctxisp/ops.hpp"
#include "ctxisp/raw.hpp"
#include "ctxisp/rng.hpp"
#include "ctxisp/tensor.hpp"
#include "ctxisp/trainer.hpp"

using namespace ctxisp;
namespace fs = std::filesystem;

namespace {

std::string zero_pad(long v, int width) {
  std::ostringstream ss;
  ss << std::setw(width) << std::setfill('0') << v;
  return ss.str();
}

// "H,W" or "HxW".
std::pair<int, int> parse_size(const std::string& s) {
  size_t sep = s.find_first_of(",x");
  CTXISP_CHECK(sep != std::string::npos && sep > 0 && sep + 1 < s.size(),
               "size must be H,W, got '", s, "'");
  int h = std::stoi(s.substr(0, sep));
  int w = std::stoi(s.substr(sep + 1));
  CTXISP_CHECK(h > 0 && w > 0, "size must be positive, got '", s, "'");
  return {h, w};
}

// "black,white" (one black level for all RGGB sites) or
// "b0,b1,b2,b3,white".
void parse_levels(const std::string& s, BayerImage& img) {
  std::vector<int> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) v.push_back(std::stoi(tok));
  if (v.size() == 2) {
    img.black_level = {v[0], v[0], v[0], v[0]};
    img.white_level = v[1];
  } else if (v.size() == 5) {
    img.black_level = {v[0], v[1], v[2], v[3]};
    img.white_level = v[4];
  } else {
    CTXISP_CHECK(false, "--meta wants black,white or b0,b1,b2,b3,white, got '",
                 s, "'");
  }
}

GuideMode guide_mode_of(const std::string& s) {
  return s == "patch" ? GuideMode::kPatch : GuideMode::kFullImage;
}

// The resolved configuration as '# key=value' lines. Stripping the '# '
// prefix yields a valid config file for the same subcommand (the command
// banner stays a comment, and --config itself is not echoed).
std::string resolved_config(const CLI::App& sub) {
  std::istringstream in(sub.config_to_str(true, false));
  std::ostringstream out;
  out << "# # command=" << sub.get_name() << '\n';
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out << "# " << line << '\n';
  return out.str();
}

void attach_config(CLI::App* sub, std::string& path) {
  sub->add_option("--config", path,
                  "key=value file overlaying defaults (flags win)")
      ->configurable(false);
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

// Reads a key=value overlay file into argument tokens for `sub`. Keys must
// name options of that subcommand; '#' and ';' start comments. Values may
// carry one layer of quotes, so an echoed '# key=value' block pasted into
// a file round-trips.
std::vector<std::string> config_tokens(const CLI::App& sub,
                                       const std::string& path) {
  std::ifstream f(path);
  CTXISP_CHECK(f.good(), "cannot open config file: ", path);
  std::vector<std::string> toks;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    size_t eq = t.find('=');
    CTXISP_CHECK(eq != std::string::npos && eq > 0, path, ":", lineno,
                 ": expected key=value, got '", t, "'");
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    if (val.size() >= 2 && (val.front() == '"' || val.front() == '\'') &&
        val.back() == val.front())
      val = val.substr(1, val.size() - 2);
    CTXISP_CHECK(key != "config", path, ":", lineno,
                 ": config files cannot nest");
    const CLI::Option* op = sub.get_option_no_throw("--" + key);
    CTXISP_CHECK(op != nullptr, path, ":", lineno, ": unknown key '", key,
                 "' for ", sub.get_name());
    if (op->get_expected_min() == 0)
      toks.push_back("--" + key + "=" + val);  // a switch; =true / =false
    else {
      toks.push_back("--" + key);
      toks.push_back(val);
    }
  }
  return toks;
}

// CLI11 only consults a config file registered on the app parse() starts
// from, never on a subcommand, so the overlay is spliced into the argument
// list by hand: file tokens go directly after the subcommand name, and
// every option takes the last value given, which lets explicit flags win.
std::vector<std::string> splice_config(const CLI::App& app,
                                       std::vector<std::string> args) {
  const CLI::App* sub = nullptr;
  size_t subpos = 0;
  for (size_t i = 0; i < args.size(); ++i) {
    if ((sub = app.get_subcommand_no_throw(args[i])) != nullptr) {
      subpos = i;
      break;
    }
  }
  if (!sub) return args;
  std::string path;
  for (size_t i = subpos + 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size())
      path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::vector<std::string> toks = config_tokens(*sub, path);
  args.insert(args.begin() + long(subpos) + 1, toks.begin(), toks.end());
  return args;
}

const CLI::Validator EvenNumber(
    [](std::string& s) {
      long v = std::stol(s);
      return v % 2 == 0 ? std::string() : "value must be even: " + s;
    },
    "EVEN");

// ---------------------------------------------------------------------------
// prep-synth

struct PrepOpts {
  long scenes = 0;
  std::string size = "512,512";
  std::uint64_t seed = 1;
  std::string out;
  double noise = 0.0;
  double shot_noise = 0.0;
  long patch_size = 448;
  long patch_stride = 0;  // 0 tracks patch_size
  double split = 0.9;
  double ncc_threshold = 0.5;
};

int cmd_prep_synth(const CLI::App& sub, const PrepOpts& o) {
  std::cout << resolved_config(sub);
  auto [h, w] = parse_size(o.size);
  SceneParams sp;
  sp.noise_read = o.noise;
  sp.noise_shot = o.shot_noise;
  std::vector<ScenePair> scenes;
  scenes.reserve(size_t(o.scenes));
  for (long i = 0; i < o.scenes; ++i) {
    ScenePair s =
        synth_scene_generate(Rng::mix(o.seed, std::uint64_t(i)), h, w, sp);
    s.scene_id = "scene_" + zero_pad(i, 4);
    scenes.push_back(std::move(s));
    std::cerr << "\r[prep-synth] scene " << i + 1 << "/" << o.scenes;
  }
  std::cerr << '\n';
  long stride = o.patch_stride > 0 ? o.patch_stride : o.patch_size;
  Manifest m = build_dataset(scenes, o.seed, o.out, o.split, o.ncc_threshold,
                             int(o.patch_size), int(stride));
  long sc[2] = {0, 0}, pc[2] = {0, 0};
  for (const ManifestScene& s : m.scenes) {
    sc[s.is_test] += 1;
    pc[s.is_test] += long(s.patches.size());
  }
  std::cout << "split\tscenes\tpatches\n";
  std::cout << "train\t" << sc[0] << '\t' << pc[0] << '\n';
  std::cout << "test\t" << sc[1] << '\t' << pc[1] << '\n';
  std::cout << "total\t" << sc[0] + sc[1] << '\t' << pc[0] + pc[1] << '\n';
  std::cout << "# manifest=" << (fs::path(o.out) / "manifest.json").string()
            << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  std::string data, out;
  std::string guide = "full";
  long ckpt_every = 10;  // epochs between numbered checkpoints; 0 disables
  bool resume = false;
  ModelConfig mcfg;
  TrainConfig tcfg;
};

void attach_model_flags(CLI::App* sub, ModelConfig& m) {
  sub->add_option("--mod-dim", m.mod_dim, "modification-space width")
      ->capture_default_str();
  sub->add_option("--width", m.width, "reconstruction feature width")
      ->capture_default_str();
  sub->add_option("--num-blocks", m.num_blocks, "restoration block count")
      ->capture_default_str();
  sub->add_option("--guide-size", m.guide_size, "guide side length")
      ->capture_default_str();
  sub->add_option("--proj-width", m.proj_width, "projection hidden width")
      ->capture_default_str();
  sub->add_option("--enc-width1", m.enc_width1, "encoder stage 1 width")
      ->capture_default_str();
  sub->add_option("--enc-width2", m.enc_width2, "encoder stage 2 width")
      ->capture_default_str();
}

void epoch_row(std::ostream& os, const EpochStats& st, long step) {
  os << st.epoch << '\t' << step << '\t' << st.lr << '\t' << st.total << '\t'
     << st.mse << '\t' << st.ssim << '\t' << st.grad << '\t' << st.color_final
     << '\t' << st.color_cmod << '\t' << st.grad_norm << '\t' << st.seconds
     << '\n';
}

int cmd_train(const CLI::App& sub, TrainOpts& o) {
  const std::string cfg_text = resolved_config(sub);
  std::cout << cfg_text;
  o.tcfg.guide_mode = guide_mode_of(o.guide);
  fs::create_directories(o.out);

  Manifest m = load_manifest(o.data);
  LoadedDataset data = load_dataset(m, o.mcfg.guide_size);
  Trainer trainer(o.mcfg, o.tcfg);
  const std::string last = (fs::path(o.out) / "last.bin").string();
  if (o.resume) {
    CTXISP_REQUIRE(fs::exists(last), "--resume: no checkpoint at ", last);
    trainer.load(last);
    std::cout << "# resumed_step=" << trainer.step() << '\n';
  }

  std::ofstream log((fs::path(o.out) / "train.log").string(), std::ios::app);
  CTXISP_REQUIRE(log.good(), "cannot open the training log under ", o.out);
  log << cfg_text;

  const char* hdr =
      "epoch\tstep\tlr\ttotal\tmse\tssim\tgrad\tcolor_final\tcolor_cmod\t"
      "grad_norm\tseconds\n";
  std::cout << hdr;
  log << hdr;

  const long spe = long(data.train.size()) / o.tcfg.batch_size;
  CTXISP_CHECK(spe >= 1, "training split (", data.train.size(),
               " patches) is smaller than one batch of ", o.tcfg.batch_size);
  long total_steps = long(o.tcfg.epochs) * spe;
  if (o.tcfg.max_steps > 0) total_steps = std::min(total_steps, o.tcfg.max_steps);

  while (trainer.step() < total_steps) {
    EpochStats st = trainer.train_epoch(data);
    epoch_row(std::cout, st, trainer.step());
    epoch_row(log, st, trainer.step());
    log.flush();
    if (o.tcfg.eval_every > 0 && !data.test.empty() &&
        (st.epoch + 1) % o.tcfg.eval_every == 0) {
      EvalResult ev = trainer.evaluate(data, o.tcfg.guide_mode);
      log << "eval\t" << trainer.step() << '\t' << ev.psnr << '\t' << ev.ssim
          << '\t' << ev.de00 << '\t' << ev.de76 << '\n';
      log.flush();
    }
    trainer.save(last);
    if (o.ckpt_every > 0 && trainer.epoch() % o.ckpt_every == 0 &&
        trainer.step() % spe == 0) {
      trainer.save((fs::path(o.out) /
                    ("ckpt_" + zero_pad(trainer.epoch(), 4) + ".bin"))
                       .string());
    }
  }
  trainer.save(last);
  std::cout << "# checkpoint=" << last << '\n';

  EvalResult ev = trainer.evaluate(data, o.tcfg.guide_mode);
  write_metric_report(std::cout, ev);
  const std::string metrics = (fs::path(o.out) / "metrics.tsv").string();
  std::ofstream mf(metrics, std::ios::trunc);
  CTXISP_REQUIRE(mf.good(), "cannot write ", metrics);
  write_metric_report(mf, ev);
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  std::string ckpt, data, out;
  std::string guide = "full";
};

int cmd_eval(const CLI::App& sub, const EvalOpts& o) {
  std::cout << resolved_config(sub);
  ModelConfig mcfg = checkpoint_model_config(o.ckpt);
  Trainer trainer(mcfg, TrainConfig{});
  trainer.load(o.ckpt);
  LoadedDataset data = load_dataset(load_manifest(o.data), mcfg.guide_size);
  EvalResult ev = trainer.evaluate(data, guide_mode_of(o.guide));
  write_metric_report(std::cout, ev);
  const std::string outp = o.out.empty() ? o.ckpt + ".metrics.tsv" : o.out;
  std::ofstream f(outp, std::ios::trunc);
  CTXISP_REQUIRE(f.good(), "cannot write ", outp);
  write_metric_report(f, ev);
  std::cout << "# metrics_file=" << outp << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// infer

struct InferOpts {
  std::string ckpt, raw, out;
  std::string meta = "64,1023";
  long tile = 0;
  long overlap = 32;
  long depth = 8;
};

int cmd_infer(const CLI::App& sub, const InferOpts& o) {
  std::cout << resolved_config(sub);
  BayerImage img;
  img.samples = read_pgm16(o.raw, img.width, img.height);
  parse_levels(o.meta, img);
  img.validate();
  ModelConfig mcfg = checkpoint_model_config(o.ckpt);
  Trainer trainer(mcfg, TrainConfig{});
  trainer.load(o.ckpt);
  Tensor<float> rgb =
      isp_forward_fullres(trainer.params(), img, int(o.tile), int(o.overlap));
  if (o.depth == 16)
    write_png_rgb16(o.out, rgb);
  else
    write_png_rgb8(o.out, rgb);
  std::cout << "output\twidth\theight\ttile\tdepth\n";
  std::cout << o.out << '\t' << img.width << '\t' << img.height << '\t'
            << o.tile << '\t' << o.depth << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradOpts {
  long bits = 64;
  double tol = 1e-6;
  std::uint64_t seed = 1;
};

struct OpRow {
  std::string name;
  double max_rel = 0;
  double max_abs = 0;
  size_t checked = 0;
};

template <typename T>
std::vector<OpRow> gradcheck_suite(std::uint64_t seed) {
  Tape<T> tape;
  Rng rng(Rng::mix(seed, 0x6772u));
  std::vector<OpRow> rows;
  auto push = [&rows](const char* name, const GradCheckResult<T>& r) {
    rows.push_back({name, r.max_rel, r.max_abs, r.checked});
  };
  auto vt = [&](const Shape& s, double lo, double hi) {
    auto t = Tensor<T>::variable(s, &tape);
    for (size_t i = 0; i < t.size(); ++i) t.data()[i] = T(rng.uniform(lo, hi));
    return t;
  };
  auto ct = [&](const Shape& s, double lo, double hi) {
    auto t = Tensor<T>::uninit(s);
    for (size_t i = 0; i < t.size(); ++i) t.data()[i] = T(rng.uniform(lo, hi));
    return t;
  };
  auto run = [&](auto fwd, std::vector<Tensor<T>> wrt, T fd) {
    return grad_check<T>(fwd, wrt, tape, rng, fd, 12);
  };

  // float32 runs sit on a much higher rounding floor, so both the step
  // sizes and any sensible --tol are three orders of magnitude wider.
  const bool f32 = sizeof(T) == 4;
  // Ops that are linear in each input separately have zero truncation
  // error under central differences, so a wide step costs nothing and
  // keeps rounding noise out of near-cancelled gradient components.
  const T fd_lin = T(f32 ? 1e-2 : 1e-4);
  // Smooth nonlinear ops balance rounding against h^2 curvature error.
  const T fd = T(f32 ? 1e-3 : 1e-5);
  // Loss surfaces have O(1)-O(100) values over mostly-small gradient
  // components; a wider step keeps rounding noise out of the quiet ones.
  const T fd_loss = T(f32 ? 3e-3 : 3e-5);
  // The edge loss is piecewise linear, so a wide step has zero truncation
  // error; inputs below keep every |.| kink far away.
  const T fd_edge = T(f32 ? 5e-3 : 1e-3);

  {
    auto x = vt({2, 3, 6, 7}, -1, 1);
    auto w = vt({4, 3, 3, 3}, -1, 1);
    auto b = vt({4}, -1, 1);
    push("conv2d",
         run([&] { return mean_all(conv2d(x, w, b, 1, 1)); }, {x, w, b}, fd_lin));
  }
  {
    auto x = vt({1, 3, 9, 11}, -1, 1);
    auto w = vt({2, 3, 5, 5}, -1, 1);
    auto b = vt({2}, -1, 1);
    push("conv2d_s2",
         run([&] { return mean_all(conv2d(x, w, b, 2, 2)); }, {x, w, b}, fd_lin));
  }
  {
    auto x = vt({2, 4, 5, 5}, -1, 1);
    auto w = vt({6, 4, 1, 1}, -1, 1);
    auto b = vt({6}, -1, 1);
    push("conv2d_1x1",
         run([&] { return mean_all(conv2d(x, w, b)); }, {x, w, b}, fd_lin));
  }
  {
    auto x = vt({1, 4, 6, 6}, -1, 1);
    auto w = vt({4, 1, 3, 3}, -1, 1);
    auto b = vt({4}, -1, 1);
    push("conv2d_dw", run([&] { return mean_all(conv2d(x, w, b, 1, 1, 4)); },
                          {x, w, b}, fd_lin));
  }
  {
    auto x = vt({1, 4, 6, 6}, -1, 1);
    auto w = vt({6, 2, 3, 3}, -1, 1);
    auto b = vt({6}, -1, 1);
    push("conv2d_g2", run([&] { return mean_all(conv2d(x, w, b, 1, 1, 2)); },
                          {x, w, b}, fd_lin));
  }
  {
    auto x = vt({2, 3, 4, 5}, -2, 2);
    push("gelu", run([&] { return mean_all(gelu(x)); }, {x}, fd));
    push("sigmoid", run([&] { return mean_all(sigmoid(x)); }, {x}, fd));
  }
  {
    auto x = vt({2, 4, 3, 3}, -1, 1);
    auto g = vt({4}, 0.5, 1.5);
    auto b = vt({4}, -0.5, 0.5);
    push("layer_norm",
         run([&] { return mean_all(layer_norm_channels(x, g, b)); }, {x, g, b},
             fd));
  }
  {
    auto x = vt({1, 3, 6, 8}, -1, 1);
    push("avg_pool2d",
         run([&] { return mean_all(avg_pool2d(x, 2, 2)); }, {x}, fd_lin));
    push("global_avg_pool",
         run([&] { return mean_all(global_avg_pool(x)); }, {x}, fd_lin));
  }
  {
    auto x = vt({2, 3, 4, 4}, -1, 1);
    auto s = vt({2, 3, 1, 1}, 0.25, 1.75);
    push("channel_scale",
         run([&] { return mean_all(channel_scale(x, s)); }, {x, s}, fd_lin));
    auto s1 = vt({1, 3, 1, 1}, 0.25, 1.75);
    push("channel_scale_shared",
         run([&] { return mean_all(channel_scale(x, s1)); }, {x, s1}, fd_lin));
  }
  {
    auto a = vt({2, 2, 3, 3}, -1, 1);
    auto b = vt({2, 2, 3, 3}, 0.5, 1.5);
    push("add", run([&] { return mean_all(add(a, b)); }, {a, b}, fd_lin));
    push("sub", run([&] { return mean_all(sub(a, b)); }, {a, b}, fd_lin));
    push("mul", run([&] { return mean_all(mul(a, b)); }, {a, b}, fd_lin));
    push("divide", run([&] { return mean_all(divide(a, b)); }, {a, b}, fd));
    push("scalar_mul",
         run([&] { return mean_all(scalar_mul(a, T(1.7))); }, {a}, fd_lin));
    push("scalar_add",
         run([&] { return mean_all(scalar_add(a, T(-0.3))); }, {a}, fd_lin));
    push("sum_channels",
         run([&] { return mean_all(sum_channels(a)); }, {a}, fd_lin));
    push("mean_all", run([&] { return mean_all(a); }, {a}, fd_lin));
  }
  {
    auto x = vt({1, 2, 4, 4}, 0.05, 0.95);
    push("sqrt_shift",
         run([&] { return mean_all(sqrt_shift(x, T(1e-3))); }, {x}, fd));
    push("clamp01", run([&] { return mean_all(clamp01(x)); }, {x}, fd_lin));
  }
  {
    // abs away from the kink: magnitudes stay above any probe step.
    auto x = Tensor<T>::variable({1, 2, 4, 4}, &tape);
    for (size_t i = 0; i < x.size(); ++i) {
      double mag = rng.uniform(0.2, 1.0);
      x.data()[i] = T(rng.uniform(0.0, 1.0) < 0.5 ? -mag : mag);
    }
    push("abs_val", run([&] { return mean_all(abs_val(x)); }, {x}, fd_lin));
  }
  {
    auto x = vt({1, 3, 5, 5}, 0.05, 0.95);
    push("srgb_to_lab",
         run([&] { return scalar_mul(mean_all(srgb_to_lab(x)), T(0.01)); },
             {x}, fd));
  }
  {
    auto pred = vt({1, 2, 12, 12}, 0.1, 0.9);
    auto target = ct({1, 2, 12, 12}, 0.1, 0.9);
    push("mse_loss",
         run([&] { return mse_loss(pred, target); }, {pred}, fd_loss));
    push("ssim_index",
         run([&] { return ssim_index(pred, target); }, {pred}, fd_loss));
  }
  {
    // Both fields quantized to a 1/17 lattice plus non-lattice ramps on the
    // prediction: every Sobel-response difference is then at least ~0.02 in
    // magnitude, far beyond the probe step of the piecewise-linear loss.
    auto gp = Tensor<T>::variable({1, 2, 12, 12}, &tape);
    auto gt = Tensor<T>::uninit({1, 2, 12, 12});
    for (size_t i = 0; i < gp.size(); ++i) {
      int xc = int(i % 12), yc = int((i / 12) % 12);
      gp.data()[i] = T(std::floor(rng.uniform(0.0, 17.999)) / 17.0 +
                       0.0029 * xc + 0.0041 * yc);
      gt.data()[i] = T(std::floor(rng.uniform(0.0, 17.999)) / 17.0);
    }
    push("gradient_loss",
         run([&] { return gradient_loss(gp, gt); }, {gp}, fd_edge));
  }
  {
    auto pred = vt({1, 3, 8, 8}, 0.1, 0.9);
    auto target = ct({1, 3, 8, 8}, 0.1, 0.9);
    push("color_loss",
         run([&] { return color_loss(pred, target); }, {pred}, fd_loss));
  }
  return rows;
}

int cmd_gradcheck(const CLI::App& sub, const GradOpts& o) {
  std::cout << resolved_config(sub);
  std::vector<OpRow> rows = o.bits == 32 ? gradcheck_suite<float>(o.seed)
                                         : gradcheck_suite<double>(o.seed);
  bool all_pass = true;
  double worst = 0;
  std::cout << "op\tmax_rel\tmax_abs\tchecked\tstatus\n";
  std::cout << std::scientific << std::setprecision(3);
  for (const OpRow& r : rows) {
    const bool ok = r.max_rel <= o.tol;
    all_pass = all_pass && ok;
    worst = std::max(worst, r.max_rel);
    std::cout << r.name << '\t' << r.max_rel << '\t' << r.max_abs << '\t'
              << r.checked << '\t' << (ok ? "pass" : "FAIL") << '\n';
  }
  std::cout << "# worst=" << worst << " tol=" << o.tol << '\n';
  return all_pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// stats

struct StatsOpts {
  ModelConfig mcfg;
  std::string size;
  bool layers = false;
};

int cmd_stats(const CLI::App& sub, const StatsOpts& o) {
  std::cout << resolved_config(sub);
  o.mcfg.validate();
  Tape<float> tape;
  IspParams<float> p = init_isp<float>(o.mcfg, 0, &tape);
  MacReport r = count_macs(o.mcfg, 448, 448);
  std::cout << "metric\tvalue\n";
  std::cout << "params\t" << count_params(p) << '\n';
  std::cout << "macs_448x448\t" << r.total << '\n';
  if (!o.size.empty()) {
    auto [h, w] = parse_size(o.size);
    std::cout << "macs_" << h << 'x' << w << '\t' << count_macs(o.mcfg, h, w).total
              << '\n';
  }
  if (o.layers) {
    std::cout << "\nlayer\tmacs_448x448\n";
    for (const MacEntry& e : r.entries)
      std::cout << e.name << '\t' << e.macs << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "learned ISP: global-context color module with a compact "
      "reconstruction network"};
  app.require_subcommand(1);
  int rc = 0;

  PrepOpts po;
  CLI::App* prep =
      app.add_subcommand("prep-synth", "render a synthetic RAW/RGB dataset");
  prep->add_option("--scenes", po.scenes, "number of scenes to generate")
      ->required()
      ->check(CLI::PositiveNumber);
  prep->add_option("--size", po.size, "scene size as H,W")
      ->capture_default_str();
  prep->add_option("--seed", po.seed, "generator seed")->capture_default_str();
  prep->add_option("--out", po.out, "output directory")->required();
  prep->add_option("--noise", po.noise, "read noise sigma (normalized units)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  prep->add_option("--shot-noise", po.shot_noise, "shot noise coefficient")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  prep->add_option("--patch-size", po.patch_size, "training patch side")
      ->capture_default_str()
      ->check(CLI::PositiveNumber)
      ->check(EvenNumber);
  prep->add_option("--patch-stride", po.patch_stride,
                   "patch grid stride (0 = patch size)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  prep->add_option("--split", po.split, "train fraction of scenes")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  prep->add_option("--ncc-threshold", po.ncc_threshold,
                   "drop patches whose RAW/RGB correlation is at or below")
      ->capture_default_str();
  std::string prep_cfg;
  attach_config(prep, prep_cfg);
  prep->callback([&rc, prep, &po] { rc = cmd_prep_synth(*prep, po); });

  TrainOpts to;
  CLI::App* train = app.add_subcommand("train", "train a model on a manifest");
  train->add_option("--data", to.data, "manifest path")->required();
  train->add_option("--out", to.out, "checkpoint + log directory")->required();
  train->add_option("--epochs", to.tcfg.epochs, "epochs to train")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train->add_option("--guide", to.guide, "guide mode: full or patch")
      ->capture_default_str()
      ->check(CLI::IsMember({"full", "patch"}));
  train->add_option("--seed", to.tcfg.seed, "training seed")
      ->capture_default_str();
  train->add_option("--lr", to.tcfg.lr, "Adam learning rate")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train->add_option("--batch-size", to.tcfg.batch_size, "patches per step")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train->add_option("--decay-factor", to.tcfg.decay_factor,
                    "learning-rate decay factor")
      ->capture_default_str();
  train->add_option("--decay-every", to.tcfg.decay_every_epochs,
                    "epochs between decays (0 disables)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  train->add_option("--grad-clip", to.tcfg.grad_clip,
                    "global-norm gradient clip (0 disables)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  train->add_option("--max-steps", to.tcfg.max_steps,
                    "hard step cap (0 = epochs only)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  train->add_option("--eval-every", to.tcfg.eval_every,
                    "epochs between mid-run test evals (0 = none)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  train->add_flag("--cmod-only", to.tcfg.cmod_only,
                  "train the color module alone (identity reconstruction)");
  train->add_option("--w-mse", to.tcfg.weights.mse, "MSE loss weight")
      ->capture_default_str();
  train->add_option("--w-ssim", to.tcfg.weights.ssim, "SSIM loss weight")
      ->capture_default_str();
  train->add_option("--w-grad", to.tcfg.weights.grad, "edge loss weight")
      ->capture_default_str();
  train->add_option("--w-color-final", to.tcfg.weights.color_final,
                    "color loss weight on the final output")
      ->capture_default_str();
  train->add_option("--w-color-cmod", to.tcfg.weights.color_cmod,
                    "color loss weight on the color-module output")
      ->capture_default_str();
  train->add_option("--ckpt-every", to.ckpt_every,
                    "epochs between numbered checkpoints (0 = only last.bin)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  train->add_flag("--resume", to.resume, "continue from <out>/last.bin");
  attach_model_flags(train, to.mcfg);
  std::string train_cfg;
  attach_config(train, train_cfg);
  train->callback([&rc, train, &to] { rc = cmd_train(*train, to); });

  EvalOpts eo;
  CLI::App* eval_ =
      app.add_subcommand("eval", "evaluate a checkpoint on a test split");
  eval_->add_option("--ckpt", eo.ckpt, "checkpoint path")->required();
  eval_->add_option("--data", eo.data, "manifest path")->required();
  eval_->add_option("--out", eo.out,
                    "metric table file (default <ckpt>.metrics.tsv)");
  eval_->add_option("--guide", eo.guide, "guide mode: full or patch")
      ->capture_default_str()
      ->check(CLI::IsMember({"full", "patch"}));
  std::string eval_cfg;
  attach_config(eval_, eval_cfg);
  eval_->callback([&rc, eval_, &eo] { rc = cmd_eval(*eval_, eo); });

  InferOpts io;
  CLI::App* infer =
      app.add_subcommand("infer", "full-resolution RAW -> RGB inference");
  infer->add_option("--ckpt", io.ckpt, "checkpoint path")->required();
  infer->add_option("--raw", io.raw, "16-bit PGM mosaic (RGGB)")->required();
  infer->add_option("--meta", io.meta,
                    "levels: black,white or b0,b1,b2,b3,white")
      ->capture_default_str();
  infer->add_option("--out", io.out, "output PNG path")->required();
  infer->add_option("--tile", io.tile,
                    "spatial tile for bounded memory (0 = whole image)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  infer->add_option("--overlap", io.overlap, "tile overlap in pixels")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  infer->add_option("--depth", io.depth, "PNG bit depth")
      ->capture_default_str()
      ->check(CLI::IsMember({8, 16}));
  std::string infer_cfg;
  attach_config(infer, infer_cfg);
  infer->callback([&rc, infer, &io] { rc = cmd_infer(*infer, io); });

  GradOpts go;
  CLI::App* grad = app.add_subcommand(
      "gradcheck", "finite-difference audit of the differentiable ops");
  grad->add_option("--bits", go.bits, "float width of the audit")
      ->capture_default_str()
      ->check(CLI::IsMember({32, 64}));
  grad->add_option("--tol", go.tol,
                   "max relative error to pass; 32-bit runs resolve the "
                   "well-conditioned ops near 1e-3 but leave the loss "
                   "surfaces on the float noise floor")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  grad->add_option("--seed", go.seed, "test-point seed")->capture_default_str();
  std::string grad_cfg;
  attach_config(grad, grad_cfg);
  grad->callback([&rc, grad, &go] { rc = cmd_gradcheck(*grad, go); });

  StatsOpts so;
  CLI::App* stats =
      app.add_subcommand("stats", "parameter and MAC accounting");
  attach_model_flags(stats, so.mcfg);
  stats->add_option("--size", so.size, "extra resolution to report, as H,W");
  stats->add_flag("--layers", so.layers, "also print the per-layer MAC table");
  std::string stats_cfg;
  attach_config(stats, stats_cfg);
  stats->callback([&rc, stats, &so] { rc = cmd_stats(*stats, so); });

  for (CLI::App* sub : app.get_subcommands(nullptr))
    for (CLI::Option* opt : sub->get_options())
      opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  try {
    std::vector<std::string> args =
        splice_config(app, std::vector<std::string>(argv + 1, argv + argc));
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return rc;
}
