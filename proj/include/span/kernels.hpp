// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense inner-loop kernels behind convolution, transposed convolution and
// matrix products. A scalar reference table is always available; an
// AVX2+FMA table is compiled in when the toolchain supports it and chosen
// at runtime when the CPU does. All matrices are row-major and every
// kernel accumulates into its output (C += ...).

#include <cstddef>
#include <string_view>

namespace span::kernels {

struct KernelTable {
  const char* name;
  /// C[M x N] += A[M x K] * B[K x N]
  void (*gemm_nn)(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
                  double* C);
  /// C[M x N] += A^T * B with A stored [K x M], B [K x N]
  void (*gemm_tn)(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
                  double* C);
  /// C[M x N] += A * B^T with A [M x K], B stored [N x K]
  void (*gemm_nt)(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
                  double* C);
  double (*dot)(const double* a, const double* b, std::size_t n);
  /// y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
};

const KernelTable& scalar_table();

/// nullptr when the AVX2 variant was not compiled in or the CPU lacks AVX2/FMA.
const KernelTable* avx2_table();

/// The table used by the tensor engine. Defaults to the best supported
/// variant; the environment variable SPAN_KERNELS=scalar forces the reference.
const KernelTable& active();

/// Overrides the runtime choice ("scalar" or "avx2"). Returns false if the
/// requested variant is unavailable.
bool select(std::string_view name);

}  // namespace span::kernels
