// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#include "ctxisp/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>

#include "ctxisp/common.hpp"
#include "ctxisp/ops.hpp"

namespace ctxisp {

void TrainConfig::validate() const {
  CTXISP_CHECK(lr > 0, "lr must be positive, got ", lr);
  CTXISP_CHECK(decay_factor > 0 && decay_factor <= 1,
               "decay_factor must lie in (0,1], got ", decay_factor);
  CTXISP_CHECK(decay_every_epochs >= 0, "decay_every_epochs must be >= 0");
  CTXISP_CHECK(epochs >= 0, "epochs must be >= 0");
  CTXISP_CHECK(batch_size >= 1, "batch_size must be >= 1");
  CTXISP_CHECK(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1,
               "betas must lie in [0,1)");
  CTXISP_CHECK(adam_eps > 0, "adam_eps must be positive");
  CTXISP_CHECK(eval_every >= 0, "eval_every must be >= 0");
  CTXISP_CHECK(grad_clip >= 0, "grad_clip must be >= 0");
  CTXISP_CHECK(max_steps >= 0, "max_steps must be >= 0");
  CTXISP_CHECK(weights.mse >= 0 && weights.ssim >= 0 && weights.grad >= 0 &&
                   weights.color_final >= 0 && weights.color_cmod >= 0,
               "loss weights must be non-negative");
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  CTXISP_CHECK(epoch >= 0, "epoch must be >= 0, got ", epoch);
  if (cfg.decay_every_epochs <= 0) return cfg.lr;
  return cfg.lr * std::pow(cfg.decay_factor, epoch / cfg.decay_every_epochs);
}

void adam_step(Tensor<float>& param, const float* grad, Tensor<float>& m,
               Tensor<float>& v, long t, double lr_t, double beta1,
               double beta2, double eps, double grad_scale,
               const std::string& name) {
  CTXISP_CHECK(t >= 1, "adam_step: step count must be >= 1");
  CTXISP_CHECK(m.size() == param.size() && v.size() == param.size(),
               "adam_step: moment shapes must match the parameter");
  const double bc1 = 1.0 - std::pow(beta1, double(t));
  const double bc2 = 1.0 - std::pow(beta2, double(t));
  float* w = param.data();
  float* md = m.data();
  float* vd = v.data();
  for (size_t i = 0; i < param.size(); ++i) {
    const double gi = double(grad[i]) * grad_scale;
    CTXISP_REQUIRE(std::isfinite(gi), "non-finite gradient in parameter ",
                   name, " at step ", t);
    md[i] = float(beta1 * md[i] + (1.0 - beta1) * gi);
    vd[i] = float(beta2 * vd[i] + (1.0 - beta2) * gi * gi);
    const double mhat = double(md[i]) / bc1;
    const double vhat = double(vd[i]) / bc2;
    w[i] = float(double(w[i]) - lr_t * mhat / (std::sqrt(vhat) + eps));
  }
}

Trainer::Trainer(const ModelConfig& mcfg, const TrainConfig& tcfg)
    : mcfg_(mcfg), tcfg_(tcfg), rng_(Rng::mix(tcfg.seed, 0x524e47u)) {
  mcfg_.validate();
  tcfg_.validate();
  params_ = init_isp<float>(mcfg_, tcfg_.seed, &tape_);
  // Moments exist for every parameter from the start so the checkpoint
  // layout does not depend on which parameters have been touched.
  visit_params<float>(params_, [this](const std::string& name,
                                      Tensor<float>& t) {
    adam_m_.emplace(name, Tensor<float>::zeros(t.shape()));
    adam_v_.emplace(name, Tensor<float>::zeros(t.shape()));
  });
}

long Trainer::steps_per_epoch(const LoadedDataset& data) const {
  long spe = long(data.train.size()) / tcfg_.batch_size;
  CTXISP_CHECK(spe >= 1, "training split (", data.train.size(),
               " patches) is smaller than one batch of ", tcfg_.batch_size);
  return spe;
}

IspOutput<float> Trainer::forward(const Tensor<float>& x,
                                  const Tensor<float>& guide) {
  if (tcfg_.cmod_only) {
    Tensor<float> y = cmod_forward(params_.cmod, x, guide);
    return {y, y};
  }
  return isp_forward_patch(params_, x, guide);
}

void Trainer::step_once(const LoadedDataset& data,
                        const std::vector<int>& order, long batch, int epoch,
                        EpochStats& st) {
  const int bs = tcfg_.batch_size;
  std::vector<Tensor<float>> xs, gs, ts, ls;
  xs.reserve(bs), gs.reserve(bs), ts.reserve(bs), ls.reserve(bs);
  for (int i = 0; i < bs; ++i) {
    const DataItem& item = data.train[size_t(order[size_t(batch * bs + i)])];
    xs.push_back(item.input);
    ts.push_back(item.target);
    ls.push_back(item.target_lab);
    gs.push_back(tcfg_.guide_mode == GuideMode::kFullImage
                     ? data.scene_guides[size_t(item.scene_index)]
                     : item.guide);
  }
  IspOutput<float> out = forward(stack_batch(xs), stack_batch(gs));
  LossBreakdown<float> lb =
      total_loss(out, stack_batch(ts), tcfg_.weights, stack_batch(ls));
  const double total = double(lb.total.item());
  CTXISP_REQUIRE(std::isfinite(total), "non-finite loss at step ", step_,
                 " (epoch ", epoch, ", batch ", batch, ")");
  backward(lb.total);

  double norm_sq = 0;
  visit_params<float>(params_, [&](const std::string&, Tensor<float>& p) {
    if (!p.has_grad()) return;
    const float* g = p.grad_data();
    for (size_t i = 0; i < p.size(); ++i) norm_sq += double(g[i]) * double(g[i]);
  });
  const double norm = std::sqrt(norm_sq);
  const double scale =
      tcfg_.grad_clip > 0 && norm > tcfg_.grad_clip ? tcfg_.grad_clip / norm
                                                    : 1.0;

  const double lr_t = lr_schedule(epoch, tcfg_);
  ++step_;
  visit_params<float>(params_, [&](const std::string& name,
                                   Tensor<float>& p) {
    if (!p.has_grad()) return;
    adam_step(p, p.grad_data(), adam_m_.at(name), adam_v_.at(name), step_,
              lr_t, tcfg_.beta1, tcfg_.beta2, tcfg_.adam_eps, scale, name);
    p.zero_grad();
  });

  st.steps += 1;
  st.total += total;
  st.mse += lb.mse;
  st.ssim += lb.ssim;
  st.grad += lb.grad;
  st.color_final += lb.color_final;
  st.color_cmod += lb.color_cmod;
  st.grad_norm += norm;
}

EpochStats Trainer::train_epoch(const LoadedDataset& data) {
  const long spe = steps_per_epoch(data);
  const int epoch = int(step_ / spe);
  const double lr_t = lr_schedule(epoch, tcfg_);

  // Pure per-epoch order: reshuffling from (seed, epoch) rather than a
  // long-lived stream makes resume-from-checkpoint exact at any step.
  std::vector<int> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng epoch_rng(Rng::mix(tcfg_.seed, 0x45504f43u + uint64_t(epoch)));
  epoch_rng.shuffle(order);

  EpochStats st;
  st.epoch = epoch;
  st.lr = lr_t;
  auto t0 = std::chrono::steady_clock::now();
  for (long batch = step_ % spe; batch < spe; ++batch) {
    if (tcfg_.max_steps > 0 && step_ >= tcfg_.max_steps) break;
    step_once(data, order, batch, epoch, st);
  }
  st.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  if (st.steps > 0) {
    st.total /= double(st.steps);
    st.mse /= double(st.steps);
    st.ssim /= double(st.steps);
    st.grad /= double(st.steps);
    st.color_final /= double(st.steps);
    st.color_cmod /= double(st.steps);
    st.grad_norm /= double(st.steps);
  }
  epoch_ = int(step_ / spe);
  return st;
}

long Trainer::run(const LoadedDataset& data, std::ostream* log) {
  const long spe = steps_per_epoch(data);
  long total_steps = long(tcfg_.epochs) * spe;
  if (tcfg_.max_steps > 0) total_steps = std::min(total_steps, tcfg_.max_steps);
  while (step_ < total_steps) {
    EpochStats st = train_epoch(data);
    if (log) {
      *log << st.epoch << '\t' << step_ << '\t' << st.lr << '\t' << st.total
           << '\t' << st.mse << '\t' << st.ssim << '\t' << st.grad << '\t'
           << st.color_final << '\t' << st.color_cmod << '\t' << st.grad_norm
           << '\t' << st.seconds << '\n';
      log->flush();
    }
    if (tcfg_.eval_every > 0 && !data.test.empty() &&
        (st.epoch + 1) % tcfg_.eval_every == 0) {
      EvalResult ev = evaluate(data, tcfg_.guide_mode);
      if (log) {
        *log << "eval\t" << step_ << '\t' << ev.psnr << '\t' << ev.ssim << '\t'
             << ev.de00 << '\t' << ev.de76 << '\n';
        log->flush();
      }
    }
  }
  return step_;
}

namespace {

// [1,C,H,W] -> [C,H,W] view copy for the per-image metrics.
Tensor<float> unbatch(const Tensor<float>& t) {
  CTXISP_CHECK(t.rank() == 4 && t.dim(0) == 1, "unbatch expects [1,C,H,W]");
  auto out = Tensor<float>::uninit({t.dim(1), t.dim(2), t.dim(3)});
  std::memcpy(out.data(), t.data(), t.size() * sizeof(float));
  return out;
}

}  // namespace

EvalResult Trainer::evaluate(const LoadedDataset& data, GuideMode mode) {
  NoGradGuard<float> ng(&tape_);
  EvalResult r;
  for (const DataItem& item : data.test) {
    const Tensor<float>& guide = mode == GuideMode::kFullImage
                                     ? data.scene_guides[size_t(item.scene_index)]
                                     : item.guide;
    IspOutput<float> out =
        forward(stack_batch(std::vector<Tensor<float>>{item.input}),
                stack_batch(std::vector<Tensor<float>>{guide}));
    Tensor<float> pred = unbatch(out.rgb);
    EvalRow row;
    row.image_id = item.id;
    row.psnr = psnr_metric(pred, item.target);
    row.ssim = ssim_metric(pred, item.target);
    row.de00 = mean_de2000_metric(pred, item.target);
    row.de76 = mean_de76_metric(pred, item.target);
    r.rows.push_back(std::move(row));
  }
  std::sort(r.rows.begin(), r.rows.end(),
            [](const EvalRow& a, const EvalRow& b) {
              return a.image_id < b.image_id;
            });
  double sp = 0, ss = 0, s0 = 0, s6 = 0;
  for (const EvalRow& row : r.rows) {
    sp += row.psnr;
    ss += row.ssim;
    s0 += row.de00;
    s6 += row.de76;
  }
  if (!r.rows.empty()) {
    const double n = double(r.rows.size());
    r.psnr = sp / n;
    r.ssim = ss / n;
    r.de00 = s0 / n;
    r.de76 = s6 / n;
  }
  return r;
}

void write_metric_report(std::ostream& os, const EvalResult& r) {
  os << "image_id\tpsnr\tssim\tde00\n";
  for (const EvalRow& row : r.rows) {
    os << row.image_id << '\t' << row.psnr << '\t' << row.ssim << '\t'
       << row.de00 << '\n';
  }
  os << "mean\t" << r.psnr << '\t' << r.ssim << '\t' << r.de00 << '\n';
}

// Checkpoint layout: 8-byte magic "CTXISP01", u32 little-endian version,
// u32 entry count, then per entry: u32 name length, name bytes, u32 rank,
// u32 dims, raw float32 data. Counters, the RNG state string, and config
// snapshots ride along as named entries with their bytes bit-cast into
// floats; nothing ever does arithmetic on them.
namespace {

constexpr char kMagic[8] = {'C', 'T', 'X', 'I', 'S', 'P', '0', '1'};
constexpr uint32_t kVersion = 1;

struct Entry {
  std::string name;
  Shape dims;
  std::vector<float> data;
};

void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t get_u32(std::istream& is, const char* what) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  CTXISP_REQUIRE(is.good(), "checkpoint truncated reading ", what);
  return v;
}

void write_entry(std::ostream& os, const Entry& e) {
  put_u32(os, uint32_t(e.name.size()));
  os.write(e.name.data(), std::streamsize(e.name.size()));
  put_u32(os, uint32_t(e.dims.size()));
  for (int d : e.dims) put_u32(os, uint32_t(d));
  os.write(reinterpret_cast<const char*>(e.data.data()),
           std::streamsize(e.data.size() * sizeof(float)));
}

Entry read_entry(std::istream& is) {
  Entry e;
  uint32_t len = get_u32(is, "name length");
  CTXISP_REQUIRE(len > 0 && len <= 4096, "checkpoint has a bad name length");
  e.name.resize(len);
  is.read(e.name.data(), std::streamsize(len));
  CTXISP_REQUIRE(is.good(), "checkpoint truncated reading a name");
  uint32_t rank = get_u32(is, e.name.c_str());
  CTXISP_REQUIRE(rank <= 8, "checkpoint entry ", e.name, " has rank ", rank);
  size_t numel = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    uint32_t d = get_u32(is, e.name.c_str());
    CTXISP_REQUIRE(d > 0 && numel <= (size_t(1) << 32) / d,
                   "checkpoint entry ", e.name, " has bad dims");
    e.dims.push_back(int(d));
    numel *= d;
  }
  e.data.resize(numel);
  is.read(reinterpret_cast<char*>(e.data.data()),
          std::streamsize(numel * sizeof(float)));
  CTXISP_REQUIRE(is.good(), "checkpoint truncated reading ", e.name);
  return e;
}

std::vector<float> pack_string(const std::string& s) {
  std::vector<float> out((s.size() + 3) / 4 + 1);
  uint32_t len = uint32_t(s.size());
  std::memcpy(out.data(), &len, 4);
  std::memcpy(out.data() + 1, s.data(), s.size());
  return out;
}

std::string unpack_string(const std::vector<float>& v, const char* what) {
  CTXISP_REQUIRE(!v.empty(), "checkpoint entry ", what, " is empty");
  uint32_t len = 0;
  std::memcpy(&len, v.data(), 4);
  CTXISP_REQUIRE((len + 3) / 4 + 1 == v.size(), "checkpoint entry ", what,
                 " has an inconsistent length");
  std::string s(len, '\0');
  std::memcpy(s.data(), v.data() + 1, len);
  return s;
}

float bits(uint32_t v) { return std::bit_cast<float>(v); }
uint32_t unbits(float v) { return std::bit_cast<uint32_t>(v); }

}  // namespace

void Trainer::save(const std::string& path) {
  std::vector<Entry> entries;
  auto add_tensor = [&entries](const std::string& name, Tensor<float>& t) {
    Entry e;
    e.name = name;
    e.dims = t.shape();
    e.data.assign(t.data(), t.data() + t.size());
    entries.push_back(std::move(e));
  };
  std::vector<std::string> names;
  visit_params<float>(params_, [&](const std::string& name, Tensor<float>& t) {
    names.push_back(name);
    add_tensor(name, t);
  });
  for (const std::string& n : names) add_tensor("adam.m." + n, adam_m_.at(n));
  for (const std::string& n : names) add_tensor("adam.v." + n, adam_v_.at(n));

  entries.push_back({"meta.step",
                     {2},
                     {bits(uint32_t(uint64_t(step_))),
                      bits(uint32_t(uint64_t(step_) >> 32))}});
  entries.push_back({"meta.epoch", {1}, {bits(uint32_t(epoch_))}});
  std::vector<float> rng_words = pack_string(rng_.state());
  entries.push_back({"meta.rng", {int(rng_words.size())}, std::move(rng_words)});
  entries.push_back({"meta.model",
                     {7},
                     {float(mcfg_.mod_dim), float(mcfg_.width),
                      float(mcfg_.num_blocks), float(mcfg_.guide_size),
                      float(mcfg_.proj_width), float(mcfg_.enc_width1),
                      float(mcfg_.enc_width2)}});
  entries.push_back(
      {"meta.train",
       {20},
       {float(tcfg_.lr), float(tcfg_.decay_factor),
        float(tcfg_.decay_every_epochs), float(tcfg_.epochs),
        float(tcfg_.batch_size), float(tcfg_.beta1), float(tcfg_.beta2),
        float(tcfg_.adam_eps), bits(uint32_t(tcfg_.seed)),
        bits(uint32_t(tcfg_.seed >> 32)),
        float(tcfg_.guide_mode == GuideMode::kPatch ? 1 : 0),
        float(tcfg_.eval_every), float(tcfg_.grad_clip),
        float(tcfg_.max_steps), float(tcfg_.cmod_only ? 1 : 0),
        float(tcfg_.weights.mse), float(tcfg_.weights.ssim),
        float(tcfg_.weights.grad), float(tcfg_.weights.color_final),
        float(tcfg_.weights.color_cmod)}});

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  CTXISP_REQUIRE(f.good(), "cannot open checkpoint for writing: ", path);
  f.write(kMagic, 8);
  put_u32(f, kVersion);
  put_u32(f, uint32_t(entries.size()));
  for (const Entry& e : entries) write_entry(f, e);
  f.flush();
  CTXISP_REQUIRE(f.good(), "failed writing checkpoint: ", path);
}

void Trainer::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  CTXISP_REQUIRE(f.good(), "cannot open checkpoint: ", path);
  char magic[8] = {};
  f.read(magic, 8);
  CTXISP_REQUIRE(f.good() && std::memcmp(magic, kMagic, 8) == 0,
                 "not a checkpoint (bad magic): ", path);
  uint32_t version = get_u32(f, "version");
  CTXISP_REQUIRE(version == kVersion, "unsupported checkpoint version ",
                 version, " in ", path);
  uint32_t count = get_u32(f, "entry count");
  std::map<std::string, Entry> table;
  for (uint32_t i = 0; i < count; ++i) {
    Entry e = read_entry(f);
    CTXISP_REQUIRE(table.find(e.name) == table.end(),
                   "duplicate checkpoint entry ", e.name);
    table.emplace(e.name, std::move(e));
  }

  // Validate everything before touching live state: a malformed file
  // must not leave the trainer half-restored.
  auto expect = [&table, &path](const std::string& name) -> Entry& {
    auto it = table.find(name);
    CTXISP_REQUIRE(it != table.end(), "checkpoint ", path, " is missing ",
                   name);
    return it->second;
  };
  const Entry& model = expect("meta.model");
  const float want_model[7] = {
      float(mcfg_.mod_dim),    float(mcfg_.width),
      float(mcfg_.num_blocks), float(mcfg_.guide_size),
      float(mcfg_.proj_width), float(mcfg_.enc_width1),
      float(mcfg_.enc_width2)};
  CTXISP_REQUIRE(model.data.size() == 7 &&
                     std::equal(model.data.begin(), model.data.end(),
                                want_model),
                 "checkpoint ", path,
                 " was written for a different model configuration");
  size_t used = 3;  // meta.model + meta.train + meta.rng counted below
  expect("meta.train");
  const Entry& step_e = expect("meta.step");
  CTXISP_REQUIRE(step_e.data.size() == 2, "checkpoint meta.step is malformed");
  const Entry& epoch_e = expect("meta.epoch");
  CTXISP_REQUIRE(epoch_e.data.size() == 1,
                 "checkpoint meta.epoch is malformed");
  used += 2;
  std::string rng_state = unpack_string(expect("meta.rng").data, "meta.rng");

  std::vector<std::pair<Tensor<float>*, const Entry*>> assign;
  bool shape_ok = true;
  std::string bad;
  auto plan = [&](const std::string& name, Tensor<float>& t) {
    const Entry& e = expect(name);
    if (e.dims != t.shape()) {
      shape_ok = false;
      if (bad.empty()) bad = name;
    }
    assign.emplace_back(&t, &e);
  };
  visit_params<float>(params_, [&](const std::string& name, Tensor<float>& t) {
    plan(name, t);
    plan("adam.m." + name, adam_m_.at(name));
    plan("adam.v." + name, adam_v_.at(name));
    used += 3;
  });
  CTXISP_REQUIRE(shape_ok, "checkpoint entry ", bad,
                 " has a mismatched shape");
  CTXISP_REQUIRE(used == table.size(), "checkpoint ", path, " carries ",
                 table.size() - used, " unknown entries");

  for (auto& [t, e] : assign) {
    std::memcpy(t->data(), e->data.data(), e->data.size() * sizeof(float));
    t->zero_grad();
  }
  step_ = long(uint64_t(unbits(step_e.data[0])) |
               (uint64_t(unbits(step_e.data[1])) << 32));
  epoch_ = int(unbits(epoch_e.data[0]));
  rng_.set_state(rng_state);
}

ModelConfig checkpoint_model_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  CTXISP_REQUIRE(f.good(), "cannot open checkpoint: ", path);
  char magic[8] = {};
  f.read(magic, 8);
  CTXISP_REQUIRE(f.good() && std::memcmp(magic, kMagic, 8) == 0,
                 "not a checkpoint (bad magic): ", path);
  uint32_t version = get_u32(f, "version");
  CTXISP_REQUIRE(version == kVersion, "unsupported checkpoint version ",
                 version, " in ", path);
  uint32_t count = get_u32(f, "entry count");
  for (uint32_t i = 0; i < count; ++i) {
    Entry e = read_entry(f);
    if (e.name != "meta.model") continue;
    CTXISP_REQUIRE(e.data.size() == 7, "checkpoint ", path,
                   " has a malformed meta.model entry");
    ModelConfig cfg;
    cfg.mod_dim = int(e.data[0]);
    cfg.width = int(e.data[1]);
    cfg.num_blocks = int(e.data[2]);
    cfg.guide_size = int(e.data[3]);
    cfg.proj_width = int(e.data[4]);
    cfg.enc_width1 = int(e.data[5]);
    cfg.enc_width2 = int(e.data[6]);
    cfg.validate();
    return cfg;
  }
  CTXISP_REQUIRE(false, "checkpoint ", path, " is missing meta.model");
  return {};
}

}  // namespace ctxisp
