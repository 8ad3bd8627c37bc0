#include "simd/kernels_internal.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

namespace dpguard::simd::detail {
namespace {

double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_f64(const double* a, const double* b, std::size_t n) {
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
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_f64(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void axpy_f32(float a, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void rgb_to_gray(const std::uint8_t* rgb, float* gray, std::size_t pixels) {
  const __m256i offsets = _mm256_setr_epi32(0, 3, 6, 9, 12, 15, 18, 21);
  const __m256i byte_mask = _mm256_set1_epi32(0xFF);
  const __m256 wr = _mm256_set1_ps(kLumaR);
  const __m256 wg = _mm256_set1_ps(kLumaG);
  const __m256 wb = _mm256_set1_ps(kLumaB);
  const __m256 scale = _mm256_set1_ps(kInv255);
  std::size_t i = 0;
  // Each gather lane reads 4 bytes from pixel start; stop one pixel early so
  // the final lane never reads past the buffer.
  for (; i + 9 <= pixels; i += 8) {
    const __m256i v = _mm256_i32gather_epi32(reinterpret_cast<const int*>(rgb + 3 * i), offsets, 1);
    const __m256 r = _mm256_cvtepi32_ps(_mm256_and_si256(v, byte_mask));
    const __m256 g = _mm256_cvtepi32_ps(_mm256_and_si256(_mm256_srli_epi32(v, 8), byte_mask));
    const __m256 b = _mm256_cvtepi32_ps(_mm256_and_si256(_mm256_srli_epi32(v, 16), byte_mask));
    __m256 y = _mm256_mul_ps(wr, r);
    y = _mm256_fmadd_ps(wg, g, y);
    y = _mm256_fmadd_ps(wb, b, y);
    _mm256_storeu_ps(gray + i, _mm256_mul_ps(y, scale));
  }
  for (; i < pixels; ++i) {
    const float r = rgb[3 * i], g = rgb[3 * i + 1], b = rgb[3 * i + 2];
    gray[i] = (kLumaR * r + kLumaG * g + kLumaB * b) * kInv255;
  }
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{"avx2", dot_f64, axpy_f64, axpy_f32, rgb_to_gray};
  return &table;
}

}  // namespace dpguard::simd::detail

#else

namespace dpguard::simd::detail {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace dpguard::simd::detail

#endif
