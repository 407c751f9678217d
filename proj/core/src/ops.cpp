// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#include "ctxisp/ops.hpp"

#include <cmath>
#include <cstring>

#include "ctxisp/blas.hpp"
#include "ctxisp/math_detail.hpp"

namespace ctxisp {
namespace {

template <typename T>
void debug_check_finite(const Tensor<T>& t, const char* op) {
#ifndef NDEBUG
  const T* p = t.data();
  for (size_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(double(p[i])))
      throw std::logic_error(detail::concat(op, " produced a non-finite value"));
#else
  (void)t;
  (void)op;
#endif
}

// The tape shared by grad-requiring inputs, or nullptr when nothing records.
template <typename T>
Tape<T>* active_tape(std::initializer_list<const Tensor<T>*> ins) {
  Tape<T>* t = nullptr;
  for (const Tensor<T>* x : ins) {
    if (!x->defined() || !x->requires_grad()) continue;
    Tape<T>* xt = x->tape();
    if (!xt || !xt->recording()) continue;
    CTXISP_CHECK(!t || t == xt, "inputs belong to different tapes");
    t = xt;
  }
  return t;
}

template <typename T>
void acc(T* dst, const T* src, size_t n) {
  for (size_t i = 0; i < n; ++i) dst[i] += src[i];
}

// Accumulate into x's grad only when x participates in differentiation.
template <typename T>
bool wants_grad(const std::shared_ptr<TensorData<T>>& d) {
  return d && d->requires_grad;
}

template <typename T>
void gemm(bool ta, bool tb, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc) {
  if constexpr (sizeof(T) == 4)
    blas::gemm_f32(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  else
    blas::gemm_f64(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <typename T>
void im2col(const T* x, int cin, int h, int w, int kh, int kw, int stride,
            int pad, int oh, int ow, T* col) {
  const int ohw = oh * ow;
  for (int c = 0; c < cin; ++c) {
    const T* xc = x + size_t(c) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* row = col + size_t((c * kh + ky) * kw + kx) * ohw;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride - pad + ky;
          T* dst = row + size_t(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::memset(dst, 0, size_t(ow) * sizeof(T));
            continue;
          }
          const T* src = xc + size_t(iy) * w;
          int ox = 0;
          int ix = -pad + kx;  // ix for ox=0
          for (; ox < ow && ix < 0; ++ox, ix += stride) dst[ox] = T(0);
          for (; ox < ow && ix < w; ++ox, ix += stride) dst[ox] = src[ix];
          for (; ox < ow; ++ox) dst[ox] = T(0);
        }
      }
    }
  }
}

template <typename T>
void col2im_acc(const T* col, int cin, int h, int w, int kh, int kw,
                int stride, int pad, int oh, int ow, T* dx) {
  const int ohw = oh * ow;
  for (int c = 0; c < cin; ++c) {
    T* xc = dx + size_t(c) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* row = col + size_t((c * kh + ky) * kw + kx) * ohw;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* dst = xc + size_t(iy) * w;
          const T* src = row + size_t(oy) * ow;
          int ox = 0;
          int ix = -pad + kx;
          for (; ox < ow && ix < 0; ++ox, ix += stride) {
          }
          for (; ox < ow && ix < w; ++ox, ix += stride) dst[ix] += src[ox];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int padding, int groups) {
  CTXISP_CHECK(x.defined() && x.rank() == 4,
               "conv2d: input must be [B,C,H,W]");
  CTXISP_CHECK(w.defined() && w.rank() == 4,
               "conv2d: weight must be [Cout,Cin/groups,kh,kw]");
  CTXISP_CHECK(stride >= 1, "conv2d: stride must be >= 1, got ", stride);
  CTXISP_CHECK(padding >= 0, "conv2d: padding must be >= 0, got ", padding);
  const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = w.dim(0), Cpg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  CTXISP_CHECK(groups >= 1 && Cin % groups == 0 && Cout % groups == 0,
               "conv2d: groups ", groups, " must divide Cin ", Cin,
               " and Cout ", Cout);
  CTXISP_CHECK(Cpg == Cin / groups, "conv2d: weight axis 1 is ", Cpg,
               ", expected Cin/groups = ", Cin / groups);
  if (b.defined())
    CTXISP_CHECK(b.rank() == 1 && b.dim(0) == Cout,
                 "conv2d: bias must be [Cout]");
  const int OH = (H + 2 * padding - kh) / stride + 1;
  const int OW = (W + 2 * padding - kw) / stride + 1;
  CTXISP_CHECK(H + 2 * padding >= kh && W + 2 * padding >= kw && OH > 0 &&
                   OW > 0,
               "conv2d: kernel ", kh, "x", kw, " exceeds padded input ",
               H + 2 * padding, "x", W + 2 * padding);

  Tensor<T> out = Tensor<T>::uninit({B, Cout, OH, OW});
  const size_t ohw = size_t(OH) * OW;
  const size_t hw = size_t(H) * W;
  const bool pointwise =
      kh == 1 && kw == 1 && stride == 1 && padding == 0 && groups == 1;
  const bool depthwise = groups == Cin && Cout == Cin && Cpg == 1;

  std::vector<Tensor<T>> cols;  // cached for the weight-gradient GEMM

  if (pointwise) {
    for (int bi = 0; bi < B; ++bi)
      gemm<T>(false, false, Cout, int(ohw), Cin, T(1), w.data(), Cin,
              x.data() + size_t(bi) * Cin * hw, int(ohw), T(0),
              out.data() + size_t(bi) * Cout * ohw, int(ohw));
  } else if (depthwise) {
    const T* wd = w.data();
    for (int bi = 0; bi < B; ++bi) {
      for (int c = 0; c < Cin; ++c) {
        const T* xc = x.data() + (size_t(bi) * Cin + c) * hw;
        const T* wc = wd + size_t(c) * kh * kw;
        T* oc = out.data() + (size_t(bi) * Cout + c) * ohw;
        for (int oy = 0; oy < OH; ++oy) {
          for (int ox = 0; ox < OW; ++ox) {
            T s = T(0);
            for (int ky = 0; ky < kh; ++ky) {
              int iy = oy * stride - padding + ky;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < kw; ++kx) {
                int ix = ox * stride - padding + kx;
                if (ix < 0 || ix >= W) continue;
                s += xc[size_t(iy) * W + ix] * wc[ky * kw + kx];
              }
            }
            oc[size_t(oy) * OW + ox] = s;
          }
        }
      }
    }
  } else {
    const int crows = Cpg * kh * kw;
    const int copg = Cout / groups;
    Tape<T>* t = active_tape<T>({&x, &w, &b});
    for (int bi = 0; bi < B; ++bi) {
      Tensor<T> col = Tensor<T>::uninit({groups, crows, int(ohw)});
      for (int g = 0; g < groups; ++g) {
        T* colg = col.data() + size_t(g) * crows * ohw;
        im2col(x.data() + (size_t(bi) * Cin + size_t(g) * Cpg) * hw, Cpg, H, W,
               kh, kw, stride, padding, OH, OW, colg);
        gemm<T>(false, false, copg, int(ohw), crows, T(1),
                w.data() + size_t(g) * copg * crows, crows, colg, int(ohw),
                T(0), out.data() + (size_t(bi) * Cout + size_t(g) * copg) * ohw,
                int(ohw));
      }
      if (t) cols.push_back(col);
    }
  }

  if (b.defined()) {
    const T* bd = b.data();
    for (int bi = 0; bi < B; ++bi)
      for (int c = 0; c < Cout; ++c) {
        T* oc = out.data() + (size_t(bi) * Cout + c) * ohw;
        T bv = bd[c];
        for (size_t i = 0; i < ohw; ++i) oc[i] += bv;
      }
  }
  debug_check_finite(out, "conv2d");

  Tape<T>* tape = active_tape<T>({&x, &w, &b});
  if (!tape) return out;
  out.attach(tape);

  auto xd = x.impl();
  auto wd = w.impl();
  auto bd = b.defined() ? b.impl() : nullptr;
  auto od = out.impl();
  tape->record([=, cols = std::move(cols)]() {
    if (!od->grad) return;
    const T* go = od->grad;
    if (bd && bd->requires_grad) {
      bd->ensure_grad();
      for (int bi = 0; bi < B; ++bi)
        for (int c = 0; c < Cout; ++c) {
          const T* g = go + (size_t(bi) * Cout + c) * ohw;
          T s = T(0);
          for (size_t i = 0; i < ohw; ++i) s += g[i];
          bd->grad[c] += s;
        }
    }
    const bool need_dx = wants_grad(xd);
    const bool need_dw = wants_grad(wd);
    if (!need_dx && !need_dw) return;
    if (need_dx) xd->ensure_grad();
    if (need_dw) wd->ensure_grad();

    if (pointwise) {
      for (int bi = 0; bi < B; ++bi) {
        const T* gob = go + size_t(bi) * Cout * ohw;
        if (need_dw)
          gemm<T>(false, true, Cout, Cin, int(ohw), T(1), gob, int(ohw),
                  xd->values + size_t(bi) * Cin * hw, int(ohw), T(1), wd->grad,
                  Cin);
        if (need_dx)
          gemm<T>(true, false, Cin, int(ohw), Cout, T(1), wd->values, Cin, gob,
                  int(ohw), T(1), xd->grad + size_t(bi) * Cin * hw, int(ohw));
      }
    } else if (depthwise) {
      for (int bi = 0; bi < B; ++bi) {
        for (int c = 0; c < Cin; ++c) {
          const T* xc = xd->values + (size_t(bi) * Cin + c) * hw;
          const T* gc = go + (size_t(bi) * Cout + c) * ohw;
          T* dxc = need_dx ? xd->grad + (size_t(bi) * Cin + c) * hw : nullptr;
          T* dwc = need_dw ? wd->grad + size_t(c) * kh * kw : nullptr;
          const T* wc = wd->values + size_t(c) * kh * kw;
          for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
              T g = gc[size_t(oy) * OW + ox];
              if (g == T(0)) continue;
              for (int ky = 0; ky < kh; ++ky) {
                int iy = oy * stride - padding + ky;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  int ix = ox * stride - padding + kx;
                  if (ix < 0 || ix >= W) continue;
                  if (dxc) dxc[size_t(iy) * W + ix] += g * wc[ky * kw + kx];
                  if (dwc) dwc[ky * kw + kx] += g * xc[size_t(iy) * W + ix];
                }
              }
            }
          }
        }
      }
    } else {
      const int crows = Cpg * kh * kw;
      const int copg = Cout / groups;
      Tensor<T> dcol;
      if (need_dx) dcol = Tensor<T>::uninit({crows, int(ohw)});
      for (int bi = 0; bi < B; ++bi) {
        for (int g = 0; g < groups; ++g) {
          const T* colg = cols[size_t(bi)].data() + size_t(g) * crows * ohw;
          const T* gob = go + (size_t(bi) * Cout + size_t(g) * copg) * ohw;
          if (need_dw)
            gemm<T>(false, true, copg, crows, int(ohw), T(1), gob, int(ohw),
                    colg, int(ohw), T(1),
                    wd->grad + size_t(g) * copg * crows, crows);
          if (need_dx) {
            gemm<T>(true, false, crows, int(ohw), copg, T(1),
                    wd->values + size_t(g) * copg * crows, crows, gob,
                    int(ohw), T(0), dcol.data(), int(ohw));
            col2im_acc(dcol.data(), Cpg, H, W, kh, kw, stride, padding, OH, OW,
                       xd->grad + (size_t(bi) * Cin + size_t(g) * Cpg) * hw);
          }
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  CTXISP_CHECK(x.defined(), "gelu: undefined input");
  const size_t n = x.size();
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  Tape<T>* tape = active_tape<T>({&x});
  Tensor<T> cdf, pdf;
  const T* xp = x.data();
  T* op = out.data();
  if (tape) {
    cdf = Tensor<T>::uninit(x.shape());
    pdf = Tensor<T>::uninit(x.shape());
    T* cp = cdf.data();
    T* pp = pdf.data();
    for (size_t i = 0; i < n; ++i) {
      T c, p;
      detail::norm_cdf_pdf(xp[i], c, p);
      cp[i] = c;
      pp[i] = p;
      op[i] = xp[i] * c;
    }
  } else {
    for (size_t i = 0; i < n; ++i) {
      T c, p;
      detail::norm_cdf_pdf(xp[i], c, p);
      op[i] = xp[i] * c;
    }
  }
  debug_check_finite(out, "gelu");
  if (!tape) return out;
  out.attach(tape);
  auto xd = x.impl();
  auto od = out.impl();
  tape->record([=]() {
    if (!od->grad || !wants_grad(xd)) return;
    xd->ensure_grad();
    const T* go = od->grad;
    const T* cp = cdf.data();
    const T* pp = pdf.data();
    const T* xv = xd->values;
    T* dx = xd->grad;
    for (size_t i = 0; i < n; ++i) dx[i] += go[i] * (cp[i] + xv[i] * pp[i]);
  });
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  CTXISP_CHECK(x.defined(), "sigmoid: undefined input");
  const size_t n = x.size();
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  const T* xp = x.data();
  T* op = out.data();
  for (size_t i = 0; i < n; ++i) op[i] = T(1) / (T(1) + std::exp(-xp[i]));
  debug_check_finite(out, "sigmoid");
  Tape<T>* tape = active_tape<T>({&x});
  if (!tape) return out;
  out.attach(tape);
  auto xd = x.impl();
  auto od = out.impl();
  tape->record([=]() {
    if (!od->grad || !wants_grad(xd)) return;
    xd->ensure_grad();
    const T* go = od->grad;
    const T* y = od->values;
    T* dx = xd->grad;
    for (size_t i = 0; i < n; ++i) dx[i] += go[i] * y[i] * (T(1) - y[i]);
  });
  return out;
}

template <typename T>
Tensor<T> layer_norm_channels(const Tensor<T>& x, const Tensor<T>& gamma,
                              const Tensor<T>& beta, T eps) {
  CTXISP_CHECK(x.defined() && x.rank() == 4,
               "layer_norm_channels: input must be [B,C,H,W]");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  CTXISP_CHECK(gamma.defined() && gamma.rank() == 1 && gamma.dim(0) == C,
               "layer_norm_channels: gamma must be [C]");
  CTXISP_CHECK(beta.defined() && beta.rank() == 1 && beta.dim(0) == C,
               "layer_norm_channels: beta must be [C]");
  const size_t hw = size_t(H) * W;
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  Tensor<T> mean = Tensor<T>::uninit({B, H, W});
  Tensor<T> istd = Tensor<T>::uninit({B, H, W});

  for (int bi = 0; bi < B; ++bi) {
    const T* xb = x.data() + size_t(bi) * C * hw;
    T* mb = mean.data() + size_t(bi) * hw;
    T* sb = istd.data() + size_t(bi) * hw;
    std::memset(mb, 0, hw * sizeof(T));
    for (int c = 0; c < C; ++c) {
      const T* xc = xb + size_t(c) * hw;
      for (size_t p = 0; p < hw; ++p) mb[p] += xc[p];
    }
    const T invc = T(1) / T(C);
    for (size_t p = 0; p < hw; ++p) mb[p] *= invc;
    std::memset(sb, 0, hw * sizeof(T));
    for (int c = 0; c < C; ++c) {
      const T* xc = xb + size_t(c) * hw;
      for (size_t p = 0; p < hw; ++p) {
        T d = xc[p] - mb[p];
        sb[p] += d * d;
      }
    }
    for (size_t p = 0; p < hw; ++p)
      sb[p] = T(1) / std::sqrt(sb[p] * invc + eps);
    T* ob = out.data() + size_t(bi) * C * hw;
    const T* gd = gamma.data();
    const T* bd = beta.data();
    for (int c = 0; c < C; ++c) {
      const T* xc = xb + size_t(c) * hw;
      T* oc = ob + size_t(c) * hw;
      T g = gd[c], be = bd[c];
      for (size_t p = 0; p < hw; ++p)
        oc[p] = g * (xc[p] - mb[p]) * sb[p] + be;
    }
  }
  debug_check_finite(out, "layer_norm_channels");

  Tape<T>* tape = active_tape<T>({&x, &gamma, &beta});
  if (!tape) return out;
  out.attach(tape);
  auto xd = x.impl();
  auto gd = gamma.impl();
  auto bd = beta.impl();
  auto od = out.impl();
  tape->record([=]() {
    if (!od->grad) return;
    const bool need_dx = wants_grad(xd);
    const bool need_dg = wants_grad(gd);
    const bool need_db = wants_grad(bd);
    if (!need_dx && !need_dg && !need_db) return;
    if (need_dx) xd->ensure_grad();
    if (need_dg) gd->ensure_grad();
    if (need_db) bd->ensure_grad();
    Tensor<T> s1t = Tensor<T>::uninit({int(hw)});
    Tensor<T> s2t = Tensor<T>::uninit({int(hw)});
    T* s1 = s1t.data();
    T* s2 = s2t.data();
    const T invc = T(1) / T(C);
    for (int bi = 0; bi < B; ++bi) {
      const T* xb = xd->values + size_t(bi) * C * hw;
      const T* gob = od->grad + size_t(bi) * C * hw;
      const T* mb = mean.data() + size_t(bi) * hw;
      const T* sb = istd.data() + size_t(bi) * hw;
      std::memset(s1, 0, hw * sizeof(T));
      std::memset(s2, 0, hw * sizeof(T));
      for (int c = 0; c < C; ++c) {
        const T* xc = xb + size_t(c) * hw;
        const T* gc = gob + size_t(c) * hw;
        T g = gd->values[c];
        T acc_dg = T(0), acc_db = T(0);
        for (size_t p = 0; p < hw; ++p) {
          T xhat = (xc[p] - mb[p]) * sb[p];
          T gh = gc[p] * g;
          s1[p] += gh;
          s2[p] += gh * xhat;
          acc_dg += gc[p] * xhat;
          acc_db += gc[p];
        }
        if (need_dg) gd->grad[c] += acc_dg;
        if (need_db) bd->grad[c] += acc_db;
      }
      if (need_dx) {
        T* dxb = xd->grad + size_t(bi) * C * hw;
        for (int c = 0; c < C; ++c) {
          const T* xc = xb + size_t(c) * hw;
          const T* gc = gob + size_t(c) * hw;
          T* dxc = dxb + size_t(c) * hw;
          T g = gd->values[c];
          for (size_t p = 0; p < hw; ++p) {
            T xhat = (xc[p] - mb[p]) * sb[p];
            dxc[p] += sb[p] * (gc[p] * g - invc * (s1[p] + xhat * s2[p]));
          }
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int window, int stride) {
  CTXISP_CHECK(x.defined() && x.rank() == 4,
               "avg_pool2d: input must be [B,C,H,W]");
  CTXISP_CHECK(window >= 1 && stride >= 1, "avg_pool2d: window and stride must be >= 1");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  CTXISP_CHECK(H >= window && W >= window, "avg_pool2d: window ", window,
               " exceeds input ", H, "x", W);
  const int OH = (H - window) / stride + 1;
  const int OW = (W - window) / stride + 1;
  Tensor<T> out = Tensor<T>::uninit({B, C, OH, OW});
  const T inv = T(1) / T(window * window);
  const size_t hw = size_t(H) * W, ohw = size_t(OH) * OW;
  for (int bc = 0; bc < B * C; ++bc) {
    const T* xc = x.data() + size_t(bc) * hw;
    T* oc = out.data() + size_t(bc) * ohw;
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        T s = T(0);
        for (int ky = 0; ky < window; ++ky) {
          const T* row = xc + size_t(oy * stride + ky) * W + ox * stride;
          for (int kx = 0; kx < window; ++kx) s += row[kx];
        }
        oc[size_t(oy) * OW + ox] = s * inv;
      }
  }
  debug_check_finite(out, "avg_pool2d");
  Tape<T>* tape = active_tape<T>({&x});
  if (!tape) return out;
  out.attach(tape);
  auto xd = x.impl();
  auto od = out.impl();
  tape->record([=]() {
    if (!od->grad || !wants_grad(xd)) return;
    xd->ensure_grad();
    for (int bc = 0; bc < B * C; ++bc) {
      T* dxc = xd->grad + size_t(bc) * hw;
      const T* gc = od->grad + size_t(bc) * ohw;
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          T g = gc[size_t(oy) * OW + ox] * inv;
          for (int ky = 0; ky < window; ++ky) {
            T* row = dxc + size_t(oy * stride + ky) * W + ox * stride;
            for (int kx = 0; kx < window; ++kx) row[kx] += g;
          }
        }
    }
  });
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  CTXISP_CHECK(x.defined() && x.rank() == 4,
               "global_avg_pool: input must be [B,C,H,W]");
  const int B = x.dim(0), C = x.dim(1);
  const size_t hw = size_t(x.dim(2)) * x.dim(3);
  Tensor<T> out = Tensor<T>::uninit({B, C, 1, 1});
  const T inv = T(1) / T(hw);
  // Double accumulation: this sum spans every pixel, and tiled inference
  // must reproduce it to within summation-order noise.
  for (int bc = 0; bc < B * C; ++bc) {
    const T* xc = x.data() + size_t(bc) * hw;
    double s = 0;
    for (size_t i = 0; i < hw; ++i) s += double(xc[i]);
    out.data()[bc] = T(s / double(hw));
  }
  debug_check_finite(out, "global_avg_pool");
  Tape<T>* tape = active_tape<T>({&x});
  if (!tape) return out;
  out.attach(tape);
  auto xd = x.impl();
  auto od = out.impl();
  tape->record([=]() {
    if (!od->grad || !wants_grad(xd)) return;
    xd->ensure_grad();
    for (int bc = 0; bc < B * C; ++bc) {
      T g = od->grad[bc] * inv;
      T* dxc = xd->grad + size_t(bc) * hw;
      for (size_t i = 0; i < hw; ++i) dxc[i] += g;
    }
  });
  return out;
}

template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s) {
  CTXISP_CHECK(x.defined() && x.rank() == 4,
               "channel_scale: input must be [B,C,H,W]");
  const bool rank_ok =
      s.defined() &&
      ((s.rank() == 4 && s.dim(2) == 1 && s.dim(3) == 1) || s.rank() == 2);
  CTXISP_CHECK(rank_ok && (s.dim(0) == x.dim(0) || s.dim(0) == 1) &&
                   s.dim(1) == x.dim(1),
               "channel_scale: scale must be [B,C], [B,C,1,1] or [1,C,1,1]");
  const int B = x.dim(0), C = x.dim(1);
  const bool shared = s.dim(0) == 1;  // one scale vector for the whole batch
  const size_t hw = size_t(x.dim(2)) * x.dim(3);
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  for (int bc = 0; bc < B * C; ++bc) {
    const T* xc = x.data() + size_t(bc) * hw;
    T* oc = out.data() + size_t(bc) * hw;
    T sv = s.data()[shared ? bc % C : bc];
    for (size_t i = 0; i < hw; ++i) oc[i] = xc[i] * sv;
  }
  debug_check_finite(out, "channel_scale");
  Tape<T>* tape = active_tape<T>({&x, &s});
  if (!tape) return out;
  out.attach(tape);
  auto xd = x.impl();
  auto sd = s.impl();
  auto od = out.impl();
  tape->record([=]() {
    if (!od->grad) return;
    const bool need_dx = wants_grad(xd);
    const bool need_ds = wants_grad(sd);
    if (need_dx) xd->ensure_grad();
    if (need_ds) sd->ensure_grad();
    for (int bc = 0; bc < B * C; ++bc) {
      const T* gc = od->grad + size_t(bc) * hw;
      if (need_dx) {
        T sv = sd->values[shared ? bc % C : bc];
        T* dxc = xd->grad + size_t(bc) * hw;
        for (size_t i = 0; i < hw; ++i) dxc[i] += gc[i] * sv;
      }
      if (need_ds) {
        const T* xc = xd->values + size_t(bc) * hw;
        T acc_s = T(0);
        for (size_t i = 0; i < hw; ++i) acc_s += gc[i] * xc[i];
        sd->grad[shared ? bc % C : bc] += acc_s;
      }
    }
  });
  return out;
}

namespace {

// Shared skeleton for same-shape binary elementwise ops.
template <typename T, typename Fwd, typename Bwd>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b,
                    Fwd fwd, Bwd bwd) {
  CTXISP_CHECK(a.defined() && b.defined(), name, ": undefined input");
  CTXISP_CHECK(a.shape() == b.shape(), name, ": shape mismatch");
  const size_t n = a.size();
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  fwd(a.data(), b.data(), out.data(), n);
  debug_check_finite(out, name);
  Tape<T>* tape = active_tape<T>({&a, &b});
  if (!tape) return out;
  out.attach(tape);
  auto ad = a.impl();
  auto bd = b.impl();
  auto od = out.impl();
  tape->record([=]() {
    if (!od->grad) return;
    bwd(ad, bd, od);
  });
  return out;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "add", a, b,
      [](const T* pa, const T* pb, T* po, size_t n) {
        for (size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
      },
      [](auto ad, auto bd, auto od) {
        size_t n = od->size;
        if (wants_grad(ad)) {
          ad->ensure_grad();
          acc(ad->grad, od->grad, n);
        }
        if (wants_grad(bd)) {
          bd->ensure_grad();
          acc(bd->grad, od->grad, n);
        }
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "sub", a, b,
      [](const T* pa, const T* pb, T* po, size_t n) {
        for (size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
      },
      [](auto ad, auto bd, auto od) {
        size_t n = od->size;
        if (wants_grad(ad)) {
          ad->ensure_grad();
          acc(ad->grad, od->grad, n);
        }
        if (wants_grad(bd)) {
          bd->ensure_grad();
          for (size_t i = 0; i < n; ++i) bd->grad[i] -= od->grad[i];
        }
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "mul", a, b,
      [](const T* pa, const T* pb, T* po, size_t n) {
        for (size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
      },
      [](auto ad, auto bd, auto od) {
        size_t n = od->size;
        const T* go = od->grad;
        if (wants_grad(ad)) {
          ad->ensure_grad();
          for (size_t i = 0; i < n; ++i) ad->grad[i] += go[i] * bd->values[i];
        }
        if (wants_grad(bd)) {
          bd->ensure_grad();
          for (size_t i = 0; i < n; ++i) bd->grad[i] += go[i] * ad->values[i];
        }
      });
}

template <typename T>
Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "divide", a, b,
      [](const T* pa, const T* pb, T* po, size_t n) {
        for (size_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
      },
      [](auto ad, auto bd, auto od) {
        size_t n = od->size;
        const T* go = od->grad;
        if (wants_grad(ad)) {
          ad->ensure_grad();
          for (size_t i = 0; i < n; ++i) ad->grad[i] += go[i] / bd->values[i];
        }
        if (wants_grad(bd)) {
          bd->ensure_grad();
          for (size_t i = 0; i < n; ++i)
            bd->grad[i] -= go[i] * od->values[i] / bd->values[i];
        }
      });
}

namespace {

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_op(const char* name, const Tensor<T>& x, Fwd fwd, Bwd bwd) {
  CTXISP_CHECK(x.defined(), name, ": undefined input");
  const size_t n = x.size();
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  fwd(x.data(), out.data(), n);
  debug_check_finite(out, name);
  Tape<T>* tape = active_tape<T>({&x});
  if (!tape) return out;
  out.attach(tape);
  auto xd = x.impl();
  auto od = out.impl();
  tape->record([=]() {
    if (!od->grad || !wants_grad(xd)) return;
    xd->ensure_grad();
    bwd(xd, od);
  });
  return out;
}

}  // namespace

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& x, T c) {
  return unary_op<T>(
      "scalar_mul", x,
      [c](const T* px, T* po, size_t n) {
        for (size_t i = 0; i < n; ++i) po[i] = px[i] * c;
      },
      [c](auto xd, auto od) {
        for (size_t i = 0; i < od->size; ++i) xd->grad[i] += od->grad[i] * c;
      });
}

template <typename T>
Tensor<T> scalar_add(const Tensor<T>& x, T c) {
  return unary_op<T>(
      "scalar_add", x,
      [c](const T* px, T* po, size_t n) {
        for (size_t i = 0; i < n; ++i) po[i] = px[i] + c;
      },
      [](auto xd, auto od) { acc(xd->grad, od->grad, od->size); });
}

template <typename T>
Tensor<T> sqrt_shift(const Tensor<T>& x, T eps) {
  return unary_op<T>(
      "sqrt_shift", x,
      [eps](const T* px, T* po, size_t n) {
        for (size_t i = 0; i < n; ++i) po[i] = std::sqrt(px[i] + eps);
      },
      [](auto xd, auto od) {
        for (size_t i = 0; i < od->size; ++i)
          xd->grad[i] += od->grad[i] * T(0.5) / od->values[i];
      });
}

template <typename T>
Tensor<T> abs_val(const Tensor<T>& x) {
  return unary_op<T>(
      "abs_val", x,
      [](const T* px, T* po, size_t n) {
        for (size_t i = 0; i < n; ++i) po[i] = std::abs(px[i]);
      },
      [](auto xd, auto od) {
        for (size_t i = 0; i < od->size; ++i) {
          T v = xd->values[i];
          T s = v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
          xd->grad[i] += od->grad[i] * s;
        }
      });
}

template <typename T>
Tensor<T> clamp01(const Tensor<T>& x) {
  return unary_op<T>(
      "clamp01", x,
      [](const T* px, T* po, size_t n) {
        for (size_t i = 0; i < n; ++i) {
          T v = px[i];
          po[i] = v < T(0) ? T(0) : (v > T(1) ? T(1) : v);
        }
      },
      [](auto xd, auto od) {
        for (size_t i = 0; i < od->size; ++i) {
          T v = xd->values[i];
          if (v > T(0) && v < T(1)) xd->grad[i] += od->grad[i];
        }
      });
}

template <typename T>
Tensor<T> sum_channels(const Tensor<T>& x) {
  CTXISP_CHECK(x.defined() && x.rank() == 4,
               "sum_channels: input must be [B,C,H,W]");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const size_t hw = size_t(H) * W;
  Tensor<T> out = Tensor<T>::zeros({B, 1, H, W});
  for (int bi = 0; bi < B; ++bi) {
    T* ob = out.data() + size_t(bi) * hw;
    for (int c = 0; c < C; ++c) {
      const T* xc = x.data() + (size_t(bi) * C + c) * hw;
      for (size_t i = 0; i < hw; ++i) ob[i] += xc[i];
    }
  }
  debug_check_finite(out, "sum_channels");
  Tape<T>* tape = active_tape<T>({&x});
  if (!tape) return out;
  out.attach(tape);
  auto xd = x.impl();
  auto od = out.impl();
  tape->record([=]() {
    if (!od->grad || !wants_grad(xd)) return;
    xd->ensure_grad();
    for (int bi = 0; bi < B; ++bi) {
      const T* gb = od->grad + size_t(bi) * hw;
      for (int c = 0; c < C; ++c) {
        T* dxc = xd->grad + (size_t(bi) * C + c) * hw;
        for (size_t i = 0; i < hw; ++i) dxc[i] += gb[i];
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  CTXISP_CHECK(x.defined() && x.size() > 0, "mean_all: undefined input");
  const size_t n = x.size();
  Tensor<T> out = Tensor<T>::uninit({1});
  // Pairwise-ish accumulation in double keeps large reductions stable.
  double s = 0;
  const T* px = x.data();
  for (size_t i = 0; i < n; ++i) s += double(px[i]);
  out.data()[0] = T(s / double(n));
  debug_check_finite(out, "mean_all");
  Tape<T>* tape = active_tape<T>({&x});
  if (!tape) return out;
  out.attach(tape);
  auto xd = x.impl();
  auto od = out.impl();
  tape->record([=]() {
    if (!od->grad || !wants_grad(xd)) return;
    xd->ensure_grad();
    T g = od->grad[0] / T(n);
    for (size_t i = 0; i < n; ++i) xd->grad[i] += g;
  });
  return out;
}

namespace {

// sRGB (D65) to XYZ, IEC 61966-2-1.
template <typename T>
struct LabConst {
  static constexpr T M[9] = {T(0.4124564), T(0.3575761), T(0.1804375),
                             T(0.2126729), T(0.7151522), T(0.0721750),
                             T(0.0193339), T(0.1191920), T(0.9503041)};
  static constexpr T wn[3] = {T(0.95047), T(1.0), T(1.08883)};
  static constexpr T delta = T(6.0 / 29.0);
  static constexpr T delta3 = T(216.0 / 24389.0);
  static constexpr T flin_k = T(841.0 / 108.0);  // 1 / (3 delta^2)
  static constexpr T flin_b = T(4.0 / 29.0);
};

}  // namespace

template <typename T>
Tensor<T> srgb_to_lab(const Tensor<T>& x) {
  CTXISP_CHECK(x.defined() && x.rank() == 4 && x.dim(1) == 3,
               "srgb_to_lab: input must be [B,3,H,W] in [0,1]");
  using K = LabConst<T>;
  const int B = x.dim(0);
  const size_t hw = size_t(x.dim(2)) * x.dim(3);
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  Tape<T>* tape = active_tape<T>({&x});
  Tensor<T> lin = Tensor<T>::uninit(x.shape());
  Tensor<T> ft = Tensor<T>::uninit(x.shape());

  for (int bi = 0; bi < B; ++bi) {
    const T* xb = x.data() + size_t(bi) * 3 * hw;
    T* lb = lin.data() + size_t(bi) * 3 * hw;
    T* fb = ft.data() + size_t(bi) * 3 * hw;
    T* ob = out.data() + size_t(bi) * 3 * hw;
    for (size_t p = 0; p < hw; ++p) {
      T rgb[3];
      for (int c = 0; c < 3; ++c) {
        T u = xb[size_t(c) * hw + p];
        T v = u <= T(0.04045)
                  ? u / T(12.92)
                  : std::pow((u + T(0.055)) / T(1.055), T(2.4));
        lb[size_t(c) * hw + p] = v;
        rgb[c] = v;
      }
      T f[3];
      for (int c = 0; c < 3; ++c) {
        T t = (K::M[c * 3] * rgb[0] + K::M[c * 3 + 1] * rgb[1] +
               K::M[c * 3 + 2] * rgb[2]) /
              K::wn[c];
        T fv = t > K::delta3 ? std::cbrt(t) : K::flin_k * t + K::flin_b;
        fb[size_t(c) * hw + p] = fv;
        f[c] = fv;
      }
      ob[p] = T(116) * f[1] - T(16);
      ob[hw + p] = T(500) * (f[0] - f[1]);
      ob[2 * hw + p] = T(200) * (f[1] - f[2]);
    }
  }
  debug_check_finite(out, "srgb_to_lab");
  if (!tape) return out;
  out.attach(tape);
  auto xd = x.impl();
  auto od = out.impl();
  tape->record([=]() {
    if (!od->grad || !wants_grad(xd)) return;
    xd->ensure_grad();
    for (int bi = 0; bi < B; ++bi) {
      const T* xb = xd->values + size_t(bi) * 3 * hw;
      const T* lb = lin.data() + size_t(bi) * 3 * hw;
      const T* fb = ft.data() + size_t(bi) * 3 * hw;
      const T* gb = od->grad + size_t(bi) * 3 * hw;
      T* dxb = xd->grad + size_t(bi) * 3 * hw;
      for (size_t p = 0; p < hw; ++p) {
        T dL = gb[p], da = gb[hw + p], db = gb[2 * hw + p];
        T df[3] = {T(500) * da, T(116) * dL - T(500) * da + T(200) * db,
                   T(-200) * db};
        T dxyz[3];
        for (int c = 0; c < 3; ++c) {
          T fv = fb[size_t(c) * hw + p];
          T fprime = fv > K::delta ? T(1) / (T(3) * fv * fv) : K::flin_k;
          dxyz[c] = df[c] * fprime / K::wn[c];
        }
        for (int c = 0; c < 3; ++c) {
          T dlin_c =
              K::M[c] * dxyz[0] + K::M[3 + c] * dxyz[1] + K::M[6 + c] * dxyz[2];
          T u = xb[size_t(c) * hw + p];
          T dv = u <= T(0.04045)
                     ? T(1) / T(12.92)
                     : T(2.4) * lb[size_t(c) * hw + p] / (u + T(0.055));
          dxb[size_t(c) * hw + p] += dlin_c * dv;
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items) {
  CTXISP_CHECK(!items.empty(), "stack_batch: empty input list");
  const Shape& s0 = items[0].shape();
  CTXISP_CHECK(s0.size() == 3, "stack_batch: items must be [C,H,W]");
  Shape out_shape = {int(items.size()), s0[0], s0[1], s0[2]};
  Tensor<T> out = Tensor<T>::uninit(out_shape);
  const size_t chw = items[0].size();
  for (size_t i = 0; i < items.size(); ++i) {
    CTXISP_CHECK(items[i].shape() == s0, "stack_batch: item ", i,
                 " shape differs from item 0");
    std::memcpy(out.data() + i * chw, items[i].data(), chw * sizeof(T));
  }
  return out;
}

template <typename T>
GradCheckResult<T> grad_check(const std::function<Tensor<T>()>& forward,
                              const std::vector<Tensor<T>>& wrt, Tape<T>& tape,
                              Rng& rng, T fd_step,
                              size_t max_components_per_input) {
  tape.clear();
  tape.set_recording(true);
  Tensor<T> out = forward();
  CTXISP_CHECK(out.tape() == &tape,
               "grad_check: forward() produced an untaped output");
  std::vector<T> r(out.size());
  for (auto& v : r)
    v = T((0.25 + 0.75 * rng.uniform()) * (rng.uniform() < 0.5 ? -1.0 : 1.0));

  for (auto w : wrt) w.zero_grad();
  {
    T* og = out.grad();
    for (size_t i = 0; i < r.size(); ++i) og[i] += r[i];
  }
  tape.replay_backward();
  tape.clear();

  std::vector<std::vector<T>> analytic;
  for (const auto& w : wrt) {
    std::vector<T> g(w.size(), T(0));
    if (w.grad_data()) std::memcpy(g.data(), w.grad_data(), w.size() * sizeof(T));
    analytic.push_back(std::move(g));
  }

  auto weighted = [&r](const Tensor<T>& y) {
    double s = 0;
    const T* p = y.data();
    for (size_t i = 0; i < r.size(); ++i) s += double(r[i]) * double(p[i]);
    return s;
  };

  GradCheckResult<T> res;
  {
    NoGradGuard<T> ng(&tape);
    for (size_t wi = 0; wi < wrt.size(); ++wi) {
      Tensor<T> w = wrt[wi];
      size_t n = w.size();
      std::vector<size_t> comps;
      if (n <= max_components_per_input) {
        comps.resize(n);
        for (size_t i = 0; i < n; ++i) comps[i] = i;
      } else {
        comps.resize(max_components_per_input);
        for (auto& c : comps) c = size_t(rng.next_below(n));
      }
      for (size_t idx : comps) {
        T orig = w.data()[idx];
        T h = fd_step * (T(1) + std::abs(orig));
        w.data()[idx] = orig + h;
        double fp = weighted(forward());
        w.data()[idx] = orig - h;
        double fm = weighted(forward());
        w.data()[idx] = orig;
        double fd = (fp - fm) / (2.0 * double(h));
        double an = double(analytic[wi][idx]);
        double abs_err = std::abs(an - fd);
        double rel = abs_err / (std::abs(an) + std::abs(fd) + 1e-6);
        if (abs_err > res.max_abs) res.max_abs = abs_err;
        if (rel > res.max_rel) res.max_rel = rel;
        ++res.checked;
      }
    }
  }
  tape.clear();
  for (auto w : wrt) w.zero_grad();
  return res;
}

#define CTXISP_INSTANTIATE(T)                                                  \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&,             \
                               const Tensor<T>&, int, int, int);               \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                             \
  template Tensor<T> layer_norm_channels<T>(const Tensor<T>&, const Tensor<T>&,\
                                            const Tensor<T>&, T);              \
  template Tensor<T> avg_pool2d<T>(const Tensor<T>&, int, int);                \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                     \
  template Tensor<T> channel_scale<T>(const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> divide<T>(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> scalar_mul<T>(const Tensor<T>&, T);                       \
  template Tensor<T> scalar_add<T>(const Tensor<T>&, T);                       \
  template Tensor<T> sqrt_shift<T>(const Tensor<T>&, T);                       \
  template Tensor<T> abs_val<T>(const Tensor<T>&);                             \
  template Tensor<T> clamp01<T>(const Tensor<T>&);                             \
  template Tensor<T> sum_channels<T>(const Tensor<T>&);                        \
  template Tensor<T> mean_all<T>(const Tensor<T>&);                            \
  template Tensor<T> srgb_to_lab<T>(const Tensor<T>&);                         \
  template Tensor<T> stack_batch<T>(const std::vector<Tensor<T>>&);            \
  template GradCheckResult<T> grad_check<T>(                                   \
      const std::function<Tensor<T>()>&, const std::vector<Tensor<T>>&,        \
      Tape<T>&, Rng&, T, size_t);

CTXISP_INSTANTIATE(float)
CTXISP_INSTANTIATE(double)
#undef CTXISP_INSTANTIATE

}  // namespace ctxisp
