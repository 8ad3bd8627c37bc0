#include "simd/kernels_internal.hpp"

#if defined(__ARM_NEON) && defined(__aarch64__)
#include <arm_neon.h>

namespace dpguard::simd::detail {
namespace {

double dot_f64(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_f64(double a, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

void axpy_f32(float a, const float* x, float* y, std::size_t n) {
  const float32x4_t va = vdupq_n_f32(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vfmaq_f32(vld1q_f32(y + i), va, vld1q_f32(x + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

float32x4_t widen(uint16x4_t v) { return vcvtq_f32_u32(vmovl_u16(v)); }

void rgb_to_gray(const std::uint8_t* rgb, float* gray, std::size_t pixels) {
  std::size_t i = 0;
  for (; i + 8 <= pixels; i += 8) {
    const uint8x8x3_t px = vld3_u8(rgb + 3 * i);
    const uint16x8_t r = vmovl_u8(px.val[0]);
    const uint16x8_t g = vmovl_u8(px.val[1]);
    const uint16x8_t b = vmovl_u8(px.val[2]);
    for (int half = 0; half < 2; ++half) {
      const float32x4_t rf = widen(half ? vget_high_u16(r) : vget_low_u16(r));
      const float32x4_t gf = widen(half ? vget_high_u16(g) : vget_low_u16(g));
      const float32x4_t bf = widen(half ? vget_high_u16(b) : vget_low_u16(b));
      float32x4_t y = vmulq_n_f32(rf, kLumaR);
      y = vfmaq_n_f32(y, gf, kLumaG);
      y = vfmaq_n_f32(y, bf, kLumaB);
      vst1q_f32(gray + i + 4 * half, vmulq_n_f32(y, kInv255));
    }
  }
  for (; i < pixels; ++i) {
    const float r = rgb[3 * i], g = rgb[3 * i + 1], b = rgb[3 * i + 2];
    gray[i] = (kLumaR * r + kLumaG * g + kLumaB * b) * kInv255;
  }
}

}  // namespace

const KernelTable* neon_table() {
  static const KernelTable table{"neon", dot_f64, axpy_f64, axpy_f32, rgb_to_gray};
  return &table;
}

}  // namespace dpguard::simd::detail

#else

namespace dpguard::simd::detail {
const KernelTable* neon_table() { return nullptr; }
}  // namespace dpguard::simd::detail

#endif
