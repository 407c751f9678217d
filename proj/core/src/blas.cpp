// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#include "ctxisp/blas.hpp"

#include <cstdlib>
#include <mutex>

#if defined(__linux__)
#include <dlfcn.h>
#endif

namespace ctxisp::blas {
namespace {

// CBLAS enums, replicated so no OpenBLAS headers are needed at build time.
enum CblasOrder { CblasRowMajor = 101 };
enum CblasTranspose { CblasNoTrans = 111, CblasTrans = 112 };

using sgemm_fn = void (*)(int, int, int, int, int, int, float, const float*,
                          int, const float*, int, float, float*, int);
using dgemm_fn = void (*)(int, int, int, int, int, int, double, const double*,
                          int, const double*, int, double, double*, int);
using set_threads_fn = void (*)(int);

struct Backend {
  sgemm_fn sgemm = nullptr;
  dgemm_fn dgemm = nullptr;
};

// OpenBLAS selects its kernels in the shared library constructor, so the
// core-type override has to be in the environment before the library is
// mapped. Loading lazily via dlopen keeps that window open; linking the
// library normally would run the constructor before main().
Backend load_backend() {
  Backend be;
#if defined(__linux__)
#if defined(__x86_64__)
  if (__builtin_cpu_supports("avx512f"))
    setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 0);
#endif
  setenv("OPENBLAS_NUM_THREADS", "1", 0);
  void* h = dlopen("libopenblas.so.0", RTLD_NOW | RTLD_LOCAL);
  if (!h) h = dlopen("libopenblas.so", RTLD_NOW | RTLD_LOCAL);
  if (h) {
    be.sgemm = reinterpret_cast<sgemm_fn>(dlsym(h, "cblas_sgemm"));
    be.dgemm = reinterpret_cast<dgemm_fn>(dlsym(h, "cblas_dgemm"));
    if (auto st = reinterpret_cast<set_threads_fn>(
            dlsym(h, "openblas_set_num_threads")))
      st(1);
    if (!be.sgemm || !be.dgemm) be = Backend{};
  }
#endif
  return be;
}

const Backend& backend() {
  static const Backend be = load_backend();
  return be;
}

// Fallback: straightforward register-blocked GEMM. Correct for every
// transpose combination; fast enough for tests, not for training.
template <typename T>
void gemm_ref(bool trans_a, bool trans_b, int m, int n, int k, T alpha,
              const T* a, int lda, const T* b, int ldb, T beta, T* c,
              int ldc) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) c[i * ldc + j] *= beta;
  constexpr int BK = 64;
  for (int k0 = 0; k0 < k; k0 += BK) {
    int k1 = k0 + BK < k ? k0 + BK : k;
    for (int i = 0; i < m; ++i) {
      for (int p = k0; p < k1; ++p) {
        T av = alpha * (trans_a ? a[p * lda + i] : a[i * lda + p]);
        if (av == T(0)) continue;
        const T* brow = trans_b ? nullptr : b + p * ldb;
        T* crow = c + i * ldc;
        if (trans_b) {
          for (int j = 0; j < n; ++j) crow[j] += av * b[j * ldb + p];
        } else {
          for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

}  // namespace

bool accelerated() { return backend().sgemm != nullptr; }

void gemm_f32(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
              const float* a, int lda, const float* b, int ldb, float beta,
              float* c, int ldc) {
  if (m <= 0 || n <= 0) return;
  if (const auto& be = backend(); be.sgemm) {
    be.sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
             trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
             ldb, beta, c, ldc);
    return;
  }
  gemm_ref(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm_f64(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
              const double* a, int lda, const double* b, int ldb, double beta,
              double* c, int ldc) {
  if (m <= 0 || n <= 0) return;
  if (const auto& be = backend(); be.dgemm) {
    be.dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
             trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
             ldb, beta, c, ldc);
    return;
  }
  gemm_ref(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace ctxisp::blas
