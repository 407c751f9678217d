// Copyright (c) 2026 ctxisp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

namespace ctxisp::blas {

// Row-major C = alpha * op(A) * op(B) + beta * C.
// Backed by OpenBLAS when available at runtime, with a portable blocked
// fallback otherwise. Single-threaded either way; results are deterministic
// for a fixed build on a fixed machine.
void gemm_f32(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
              const float* a, int lda, const float* b, int ldb, float beta,
              float* c, int ldc);
void gemm_f64(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
              const double* a, int lda, const double* b, int ldb, double beta,
              double* c, int ldc);

// True when the OpenBLAS backend is in use.
bool accelerated();

}  // namespace ctxisp::blas
