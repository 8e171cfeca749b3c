// SPDX-License-Identifier: Apache-2.0
// Compiled with -mavx2 -mfma. Only reached through avx2_table() after a
// runtime CPU check, so nothing here may run on hardware without AVX2.
#include <immintrin.h>

#include "span/kernels.hpp"

namespace span::kernels::avx2 {
namespace {

inline void axpy_row(double a, const double* b, double* c, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d c0 = _mm256_loadu_pd(c + j);
    __m256d c1 = _mm256_loadu_pd(c + j + 4);
    c0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j), c0);
    c1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j + 4), c1);
    _mm256_storeu_pd(c + j, c0);
    _mm256_storeu_pd(c + j + 4, c1);
  }
  for (; j + 4 <= n; j += 4) {
    _mm256_storeu_pd(c + j, _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j), _mm256_loadu_pd(c + j)));
  }
  for (; j < n; ++j) c[j] += a * b[j];
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

// C[M x N] += A * B with A addressed as A[i * si + k * sk]. The 4 x 8 block
// of C stays in registers across the whole k loop.
template <std::size_t R>
inline void block_rows(std::size_t N, std::size_t K, const double* A, std::size_t si,
                       std::size_t sk, const double* B, double* C) {
  std::size_t j = 0;
  for (; j + 8 <= N; j += 8) {
    __m256d acc[R][2];
    for (std::size_t r = 0; r < R; ++r) {
      acc[r][0] = _mm256_loadu_pd(C + r * N + j);
      acc[r][1] = _mm256_loadu_pd(C + r * N + j + 4);
    }
    for (std::size_t k = 0; k < K; ++k) {
      const __m256d b0 = _mm256_loadu_pd(B + k * N + j);
      const __m256d b1 = _mm256_loadu_pd(B + k * N + j + 4);
      for (std::size_t r = 0; r < R; ++r) {
        const __m256d a = _mm256_broadcast_sd(A + r * si + k * sk);
        acc[r][0] = _mm256_fmadd_pd(a, b0, acc[r][0]);
        acc[r][1] = _mm256_fmadd_pd(a, b1, acc[r][1]);
      }
    }
    for (std::size_t r = 0; r < R; ++r) {
      _mm256_storeu_pd(C + r * N + j, acc[r][0]);
      _mm256_storeu_pd(C + r * N + j + 4, acc[r][1]);
    }
  }
  for (; j + 4 <= N; j += 4) {
    __m256d acc[R];
    for (std::size_t r = 0; r < R; ++r) acc[r] = _mm256_loadu_pd(C + r * N + j);
    for (std::size_t k = 0; k < K; ++k) {
      const __m256d b0 = _mm256_loadu_pd(B + k * N + j);
      for (std::size_t r = 0; r < R; ++r)
        acc[r] = _mm256_fmadd_pd(_mm256_broadcast_sd(A + r * si + k * sk), b0, acc[r]);
    }
    for (std::size_t r = 0; r < R; ++r) _mm256_storeu_pd(C + r * N + j, acc[r]);
  }
  for (; j < N; ++j)
    for (std::size_t r = 0; r < R; ++r) {
      double s = C[r * N + j];
      for (std::size_t k = 0; k < K; ++k) s += A[r * si + k * sk] * B[k * N + j];
      C[r * N + j] = s;
    }
}

inline void gemm_strided(std::size_t M, std::size_t N, std::size_t K, const double* A,
                         std::size_t si, std::size_t sk, const double* B, double* C) {
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) block_rows<4>(N, K, A + i * si, si, sk, B, C + i * N);
  for (; i < M; ++i) block_rows<1>(N, K, A + i * si, si, sk, B, C + i * N);
}

void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
             double* C) {
  gemm_strided(M, N, K, A, K, 1, B, C);
}

void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
             double* C) {
  gemm_strided(M, N, K, A, 1, M, B, C);
}

// C[i, j] += dot(A row i, B row j); four rows of A share each load of B.
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
             double* C) {
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) {
    const double* a0 = A + i * K;
    const double* a1 = a0 + K;
    const double* a2 = a1 + K;
    const double* a3 = a2 + K;
    for (std::size_t j = 0; j < N; ++j) {
      const double* b = B + j * K;
      __m256d s0 = _mm256_setzero_pd(), s1 = s0, s2 = s0, s3 = s0;
      std::size_t k = 0;
      for (; k + 4 <= K; k += 4) {
        const __m256d vb = _mm256_loadu_pd(b + k);
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a0 + k), vb, s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a1 + k), vb, s1);
        s2 = _mm256_fmadd_pd(_mm256_loadu_pd(a2 + k), vb, s2);
        s3 = _mm256_fmadd_pd(_mm256_loadu_pd(a3 + k), vb, s3);
      }
      double r0 = hsum(s0), r1 = hsum(s1), r2 = hsum(s2), r3 = hsum(s3);
      for (; k < K; ++k) {
        r0 += a0[k] * b[k];
        r1 += a1[k] * b[k];
        r2 += a2[k] * b[k];
        r3 += a3[k] * b[k];
      }
      C[i * N + j] += r0;
      C[(i + 1) * N + j] += r1;
      C[(i + 2) * N + j] += r2;
      C[(i + 3) * N + j] += r3;
    }
  }
  for (; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) C[i * N + j] += dot(A + i * K, B + j * K, K);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) { axpy_row(alpha, x, y, n); }

}  // namespace

const KernelTable& table() {
  static const KernelTable t{"avx2", gemm_nn, gemm_tn, gemm_nt, dot, axpy};
  return t;
}

}  // namespace span::kernels::avx2
