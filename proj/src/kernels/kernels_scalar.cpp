// SPDX-License-Identifier: Apache-2.0
#include "span/kernels.hpp"

namespace span::kernels {
namespace {

void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
             double* C) {
  for (std::size_t i = 0; i < M; ++i) {
    double* c = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double a = A[i * K + k];
      if (a == 0.0) continue;
      const double* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
             double* C) {
  for (std::size_t k = 0; k < K; ++k) {
    const double* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const double a = A[k * M + i];
      if (a == 0.0) continue;
      double* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
             double* C) {
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) C[i * N + j] += dot(A + i * K, B + j * K, K);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{"scalar", gemm_nn, gemm_tn, gemm_nt, dot, axpy};
  return table;
}

}  // namespace span::kernels
