// Compiled with -mavx2 -mfma; only reached through the dispatcher after a
// CPUID check.

#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "anovit/kernels.hpp"

namespace anovit::kernels {
namespace {

constexpr std::size_t kBlockK = 256;
constexpr std::size_t kBlockN = 512;

// Updates R rows of C over columns [0, n) with the k-slice of A and B.
// Every element follows c = fma(a, b, c) in increasing k, in vector lanes and
// in the scalar tail alike.
template <int R>
inline void row_tile(std::size_t n, std::size_t kb, const float* a, std::size_t lda, const float* b,
                     std::size_t ldb, float* c, std::size_t ldc) {
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) {
    __m256 acc[R][2];
    for (int r = 0; r < R; ++r) {
      acc[r][0] = _mm256_loadu_ps(c + r * ldc + j);
      acc[r][1] = _mm256_loadu_ps(c + r * ldc + j + 8);
    }
    for (std::size_t p = 0; p < kb; ++p) {
      const __m256 b0 = _mm256_loadu_ps(b + p * ldb + j);
      const __m256 b1 = _mm256_loadu_ps(b + p * ldb + j + 8);
      for (int r = 0; r < R; ++r) {
        const __m256 av = _mm256_broadcast_ss(a + r * lda + p);
        acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
        acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
      }
    }
    for (int r = 0; r < R; ++r) {
      _mm256_storeu_ps(c + r * ldc + j, acc[r][0]);
      _mm256_storeu_ps(c + r * ldc + j + 8, acc[r][1]);
    }
  }
  for (; j + 8 <= n; j += 8) {
    __m256 acc[R];
    for (int r = 0; r < R; ++r) acc[r] = _mm256_loadu_ps(c + r * ldc + j);
    for (std::size_t p = 0; p < kb; ++p) {
      const __m256 b0 = _mm256_loadu_ps(b + p * ldb + j);
      for (int r = 0; r < R; ++r) {
        acc[r] = _mm256_fmadd_ps(_mm256_broadcast_ss(a + r * lda + p), b0, acc[r]);
      }
    }
    for (int r = 0; r < R; ++r) _mm256_storeu_ps(c + r * ldc + j, acc[r]);
  }
  for (; j < n; ++j) {
    for (int r = 0; r < R; ++r) {
      float s = c[r * ldc + j];
      for (std::size_t p = 0; p < kb; ++p) s = std::fma(a[r * lda + p], b[p * ldb + j], s);
      c[r * ldc + j] = s;
    }
  }
}

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
               const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, 0.0f);
  }
  for (std::size_t k0 = 0; k0 < k; k0 += kBlockK) {
    const std::size_t kb = std::min(kBlockK, k - k0);
    for (std::size_t j0 = 0; j0 < n; j0 += kBlockN) {
      const std::size_t nb = std::min(kBlockN, n - j0);
      const float* bp = b + k0 * ldb + j0;
      std::size_t i = 0;
      for (; i + 4 <= m; i += 4) row_tile<4>(nb, kb, a + i * lda + k0, lda, bp, ldb, c + i * ldc + j0, ldc);
      for (; i < m; ++i) row_tile<1>(nb, kb, a + i * lda + k0, lda, bp, ldb, c + i * ldc + j0, ldc);
    }
  }
}

void axpy_avx2(std::size_t n, float alpha, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

}  // namespace

const KernelTable<float>& avx2_table_impl() {
  static const KernelTable<float> table{Isa::avx2, &gemm_avx2, &axpy_avx2};
  return table;
}

}  // namespace anovit::kernels
