#include "uniemo/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

namespace uniemo::kernels::avx2 {

namespace {

// 4 rows x 8 columns of C held in eight ymm accumulators across the whole k loop.
inline void block_4x8(std::size_t n, std::size_t k, const double* a,
                      const double* b, double* c, bool accumulate) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  const double* a0 = a;
  const double* a1 = a + k;
  const double* a2 = a + 2 * k;
  const double* a3 = a + 3 * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double* bp = b + p * n;
    const __m256d b0 = _mm256_loadu_pd(bp);
    const __m256d b1 = _mm256_loadu_pd(bp + 4);
    __m256d av = _mm256_broadcast_sd(a0 + p);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a1 + p);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a2 + p);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a3 + p);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  double* r0 = c;
  double* r1 = c + n;
  double* r2 = c + 2 * n;
  double* r3 = c + 3 * n;
  if (accumulate) {
    c00 = _mm256_add_pd(c00, _mm256_loadu_pd(r0));
    c01 = _mm256_add_pd(c01, _mm256_loadu_pd(r0 + 4));
    c10 = _mm256_add_pd(c10, _mm256_loadu_pd(r1));
    c11 = _mm256_add_pd(c11, _mm256_loadu_pd(r1 + 4));
    c20 = _mm256_add_pd(c20, _mm256_loadu_pd(r2));
    c21 = _mm256_add_pd(c21, _mm256_loadu_pd(r2 + 4));
    c30 = _mm256_add_pd(c30, _mm256_loadu_pd(r3));
    c31 = _mm256_add_pd(c31, _mm256_loadu_pd(r3 + 4));
  }
  _mm256_storeu_pd(r0, c00);
  _mm256_storeu_pd(r0 + 4, c01);
  _mm256_storeu_pd(r1, c10);
  _mm256_storeu_pd(r1 + 4, c11);
  _mm256_storeu_pd(r2, c20);
  _mm256_storeu_pd(r2 + 4, c21);
  _mm256_storeu_pd(r3, c30);
  _mm256_storeu_pd(r3 + 4, c31);
}

inline void block_1x8(std::size_t n, std::size_t k, const double* a,
                      const double* b, double* c, bool accumulate) {
  __m256d c0 = _mm256_setzero_pd(), c1 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const double* bp = b + p * n;
    const __m256d av = _mm256_broadcast_sd(a + p);
    c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp), c0);
    c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + 4), c1);
  }
  if (accumulate) {
    c0 = _mm256_add_pd(c0, _mm256_loadu_pd(c));
    c1 = _mm256_add_pd(c1, _mm256_loadu_pd(c + 4));
  }
  _mm256_storeu_pd(c, c0);
  _mm256_storeu_pd(c + 4, c1);
}

inline void block_1x4(std::size_t n, std::size_t k, const double* a,
                      const double* b, double* c, bool accumulate) {
  __m256d c0 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a + p), _mm256_loadu_pd(b + p * n), c0);
  }
  if (accumulate) c0 = _mm256_add_pd(c0, _mm256_loadu_pd(c));
  _mm256_storeu_pd(c, c0);
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      block_4x8(n, k, a + i * k, b + j, c + i * n + j, accumulate);
    }
    for (; i < m; ++i) block_1x8(n, k, a + i * k, b + j, c + i * n + j, accumulate);
  }
  for (; j + 4 <= n; j += 4) {
    for (std::size_t i = 0; i < m; ++i) {
      block_1x4(n, k, a + i * k, b + j, c + i * n + j, accumulate);
    }
  }
  for (; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = a + i * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
  }
  for (; i + 4 <= n; i += 4) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace uniemo::kernels::avx2

#else

// Non-x86 builds: the AVX2 entry points exist but are never selected.
namespace uniemo::kernels::avx2 {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  scalar::gemm_nn(m, n, k, a, b, c, accumulate);
}
double dot(const double* x, const double* y, std::size_t n) { return scalar::dot(x, y, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) { scalar::axpy(alpha, x, y, n); }

}  // namespace uniemo::kernels::avx2

#endif
