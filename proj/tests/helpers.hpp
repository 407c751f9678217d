// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0
//
// Shared test utilities. The convolution oracle here is written
// independently of the library's im2col path on purpose: six nested
// loops, nothing shared but the layout convention.
#pragma once

#include <cmath>
#include <vector>

#include "ctxisp/rng.hpp"
#include "ctxisp/tensor.hpp"

namespace testutil {

template <typename T>
ctxisp::Tensor<T> random_tensor(const ctxisp::Shape& shape, ctxisp::Rng& rng,
                                double lo = -1.0, double hi = 1.0) {
  auto t = ctxisp::Tensor<T>::uninit(shape);
  for (size_t i = 0; i < t.size(); ++i)
    t.data()[i] = T(rng.uniform(lo, hi));
  return t;
}

template <typename T>
double max_abs_diff(const ctxisp::Tensor<T>& a, const ctxisp::Tensor<T>& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(double(a.data()[i]) - double(b.data()[i])));
  return m;
}

// Direct cross-correlation with zero padding, grouped, strided.
template <typename T>
ctxisp::Tensor<T> conv2d_direct(const ctxisp::Tensor<T>& x,
                                const ctxisp::Tensor<T>& w,
                                const ctxisp::Tensor<T>& b, int stride,
                                int padding, int groups) {
  const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = w.dim(0), Cg = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  const int OH = (H + 2 * padding - KH) / stride + 1;
  const int OW = (W + 2 * padding - KW) / stride + 1;
  const int og = Cout / groups;
  auto out = ctxisp::Tensor<T>::zeros({B, Cout, OH, OW});
  for (int n = 0; n < B; ++n)
    for (int oc = 0; oc < Cout; ++oc) {
      const int g = oc / og;
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double acc = b.defined() ? double(b.data()[oc]) : 0.0;
          for (int ic = 0; ic < Cg; ++ic)
            for (int ky = 0; ky < KH; ++ky)
              for (int kx = 0; kx < KW; ++kx) {
                int iy = oy * stride + ky - padding;
                int ix = ox * stride + kx - padding;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                double xv =
                    x.data()[((size_t(n) * Cin + g * Cg + ic) * H + iy) * W +
                             ix];
                double wv =
                    w.data()[((size_t(oc) * Cg + ic) * KH + ky) * KW + kx];
                acc += xv * wv;
              }
          out.data()[((size_t(n) * Cout + oc) * OH + oy) * OW + ox] = T(acc);
        }
    }
  return out;
}

}  // namespace testutil
