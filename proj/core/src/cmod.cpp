// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#include "ctxisp/cmod.hpp"

#include <cmath>

namespace ctxisp {

void ModelConfig::validate() const {
  CTXISP_CHECK(mod_dim >= 1, "ModelConfig: mod_dim must be positive");
  CTXISP_CHECK(width >= 1, "ModelConfig: width must be positive");
  CTXISP_CHECK(num_blocks >= 0, "ModelConfig: num_blocks must be >= 0");
  CTXISP_CHECK(proj_width >= 1 && enc_width1 >= 1 && enc_width2 >= 1,
               "ModelConfig: hidden widths must be positive");
  CTXISP_CHECK(guide_size >= min_guide_size(), "ModelConfig: guide_size ",
               guide_size, " below minimum ", min_guide_size());
}

int ModelConfig::min_guide_size() {
  // conv7 s2 valid -> pool2 s2 -> conv5 s2 valid must keep every extent >= 1;
  // conv5 needs input >= 5, so (g-7)/2+1 >= 10, i.e. g >= 25.
  return 25;
}

namespace detail {

template <typename T>
ConvLayer<T> make_conv(int cout, int cin, int kh, int kw, int stride, int pad,
                       int groups, Rng& rng, Tape<T>* tape) {
  ConvLayer<T> l;
  l.stride = stride;
  l.padding = pad;
  l.groups = groups;
  l.w = Tensor<T>::variable({cout, cin / groups, kh, kw}, tape);
  l.b = Tensor<T>::variable({cout}, tape);
  const double bound = std::sqrt(1.0 / (double(cin / groups) * kh * kw));
  T* wp = l.w.data();
  for (size_t i = 0; i < l.w.size(); ++i)
    wp[i] = T(rng.uniform(-bound, bound));
  return l;
}

template ConvLayer<float> make_conv<float>(int, int, int, int, int, int, int,
                                           Rng&, Tape<float>*);
template ConvLayer<double> make_conv<double>(int, int, int, int, int, int,
                                             int, Rng&, Tape<double>*);

}  // namespace detail

using detail::make_conv;

template <typename T>
CModParams<T> init_cmod(const ModelConfig& cfg, Rng& rng, Tape<T>* tape) {
  cfg.validate();
  CModParams<T> p;
  p.in1 = make_conv<T>(cfg.proj_width, 3, 1, 1, 1, 0, 1, rng, tape);
  p.in2 = make_conv<T>(cfg.mod_dim, cfg.proj_width, 1, 1, 1, 0, 1, rng, tape);
  p.enc1 = make_conv<T>(cfg.enc_width1, 4, 7, 7, 2, 0, 1, rng, tape);
  p.enc2 = make_conv<T>(cfg.enc_width2, cfg.enc_width1, 5, 5, 2, 0, 1, rng,
                        tape);
  p.enc3 = make_conv<T>(cfg.mod_dim, cfg.enc_width2, 1, 1, 1, 0, 1, rng, tape);
  // The modification is multiplicative, so the encoder bias starts at one:
  // an untrained module passes the projected signal through at unit gain.
  p.enc3.b.fill(T(1));
  p.out1 = make_conv<T>(cfg.proj_width, cfg.mod_dim, 1, 1, 1, 0, 1, rng, tape);
  p.out2 = make_conv<T>(3, cfg.proj_width, 1, 1, 1, 0, 1, rng, tape);
  return p;
}

template <typename T>
Tensor<T> project_in(const CModParams<T>& p, const Tensor<T>& x) {
  CTXISP_CHECK(x.defined() && x.rank() == 4 && x.dim(1) == 3,
               "project_in: input must be [B,3,H,W]");
  return apply_conv(p.in2, gelu(apply_conv(p.in1, x)));
}

template <typename T>
Tensor<T> encode_guide(const CModParams<T>& p, const Tensor<T>& guide) {
  CTXISP_CHECK(guide.defined() && guide.rank() == 4 && guide.dim(1) == 4,
               "encode_guide: guide must be [B,4,gs,gs]");
  Tensor<T> t = gelu(apply_conv(p.enc1, guide));
  t = avg_pool2d(t, 2, 2);
  t = gelu(apply_conv(p.enc2, t));
  t = global_avg_pool(t);
  return apply_conv(p.enc3, t);
}

template <typename T>
Tensor<T> project_out(const CModParams<T>& p, const Tensor<T>& xmv) {
  return apply_conv(p.out2, gelu(apply_conv(p.out1, xmv)));
}

template <typename T>
Tensor<T> cmod_forward(const CModParams<T>& p, const Tensor<T>& x,
                       const Tensor<T>& guide) {
  Tensor<T> mv = encode_guide(p, guide);
  return project_out(p, apply_modification(project_in(p, x), mv));
}

template <typename T>
void visit_cmod(CModParams<T>& p, const std::string& prefix,
                const std::function<void(const std::string&, Tensor<T>&)>& f) {
  auto layer = [&](const char* name, ConvLayer<T>& l) {
    f(prefix + name + ".w", l.w);
    f(prefix + name + ".b", l.b);
  };
  layer("in1", p.in1);
  layer("in2", p.in2);
  layer("enc1", p.enc1);
  layer("enc2", p.enc2);
  layer("enc3", p.enc3);
  layer("out1", p.out1);
  layer("out2", p.out2);
}

#define CTXISP_INSTANTIATE(T)                                               \
  template CModParams<T> init_cmod<T>(const ModelConfig&, Rng&, Tape<T>*);  \
  template Tensor<T> project_in<T>(const CModParams<T>&, const Tensor<T>&); \
  template Tensor<T> encode_guide<T>(const CModParams<T>&,                  \
                                     const Tensor<T>&);                     \
  template Tensor<T> project_out<T>(const CModParams<T>&,                   \
                                    const Tensor<T>&);                      \
  template Tensor<T> cmod_forward<T>(const CModParams<T>&, const Tensor<T>&,\
                                     const Tensor<T>&);                     \
  template void visit_cmod<T>(                                              \
      CModParams<T>&, const std::string&,                                   \
      const std::function<void(const std::string&, Tensor<T>&)>&);

CTXISP_INSTANTIATE(float)
CTXISP_INSTANTIATE(double)
#undef CTXISP_INSTANTIATE

}  // namespace ctxisp
