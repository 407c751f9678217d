// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "ctxisp/cmod.hpp"
#include "ctxisp/raw.hpp"

namespace ctxisp {

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma, beta;  // [C]
};

// Restoration block: LayerNorm -> 1x1 expand (C -> 2C) -> 3x3 depthwise ->
// GELU -> channel attention -> 1x1 project (2C -> C), then a LayerNorm +
// pointwise FFN, each branch added back through a learnable per-channel
// scale initialized to zero (the block starts as the identity).
template <typename T>
struct BlockParams {
  LayerNormParams<T> ln1, ln2;
  ConvLayer<T> expand, dw, ca_reduce, ca_expand, project, ffn1, ffn2;
  Tensor<T> alpha, beta;  // [1,C,1,1]
};

template <typename T>
struct IspParams {
  ModelConfig cfg;
  CModParams<T> cmod;
  ConvLayer<T> head, tail;  // 3x3, pad 1
  std::vector<BlockParams<T>> blocks;
};

template <typename T>
IspParams<T> init_isp(const ModelConfig& cfg, uint64_t seed, Tape<T>* tape);

template <typename T>
Tensor<T> block_forward(const BlockParams<T>& blk, const Tensor<T>& x);

// Head conv, blocks, tail conv, plus a global residual from y_c.
template <typename T>
Tensor<T> reconstruct(const IspParams<T>& p, const Tensor<T>& y_c);

template <typename T>
struct IspOutput {
  Tensor<T> y_c;  // color-module output
  Tensor<T> rgb;  // reconstructed output
};

// Patch path used in training: x is the demosaiced patch [B,3,H,W], guide
// is [B,4,gs,gs].
template <typename T>
IspOutput<T> isp_forward_patch(const IspParams<T>& p, const Tensor<T>& x,
                               const Tensor<T>& guide);

// Whole-image inference from a Bayer frame. The guide (and with it the
// modification vector) is computed once from the full frame. tile <= 0 runs
// everything in one pass; tile > 0 streams spatial passes over tile x tile
// output windows while keeping channel-attention statistics exact and
// global. Output is [3,H,W], not clamped.
Tensor<float> isp_forward_fullres(const IspParams<float>& p,
                                  const BayerImage& raw, int tile = 0,
                                  int overlap = 32);

template <typename T>
void visit_params(IspParams<T>& p,
                  const std::function<void(const std::string&, Tensor<T>&)>& f);

template <typename T>
size_t count_params(IspParams<T>& p);

inline uint64_t conv_macs(int cout, int cin, int groups, int kh, int kw,
                          int oh, int ow) {
  return uint64_t(cout) * uint64_t(cin / groups) * uint64_t(kh) *
         uint64_t(kw) * uint64_t(oh) * uint64_t(ow);
}

struct MacEntry {
  std::string name;
  uint64_t macs;
};
struct MacReport {
  std::vector<MacEntry> entries;
  uint64_t total = 0;
};

// Multiply-accumulate count for one forward pass at the given input
// resolution (convolutions only; normalization and activations carry none).
MacReport count_macs(const ModelConfig& cfg, int h, int w);

}  // namespace ctxisp
