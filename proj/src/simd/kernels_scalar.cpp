#include "simd/kernels_internal.hpp"

namespace dpguard::simd {
namespace {

double dot_f64(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_f64(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void axpy_f32(float a, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void rgb_to_gray(const std::uint8_t* rgb, float* gray, std::size_t pixels) {
  for (std::size_t i = 0; i < pixels; ++i) {
    const float r = rgb[3 * i], g = rgb[3 * i + 1], b = rgb[3 * i + 2];
    gray[i] = (detail::kLumaR * r + detail::kLumaG * g + detail::kLumaB * b) * detail::kInv255;
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{"scalar", dot_f64, axpy_f64, axpy_f32, rgb_to_gray};
  return table;
}

}  // namespace dpguard::simd
