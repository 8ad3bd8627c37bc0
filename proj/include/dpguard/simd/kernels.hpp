#pragma once

// Data-parallel inner loops with a scalar reference and ISA-specific variants
// chosen once per process. Set DPGUARD_SIMD=scalar|avx2|neon to pin a variant.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace dpguard::simd {

struct KernelTable {
  const char* name;
  double (*dot_f64)(const double* a, const double* b, std::size_t n);
  // y += a * x
  void (*axpy_f64)(double a, const double* x, double* y, std::size_t n);
  void (*axpy_f32)(float a, const float* x, float* y, std::size_t n);
  // Interleaved RGB8 to luma in [0, 1].
  void (*rgb_to_gray)(const std::uint8_t* rgb, float* gray, std::size_t pixels);
};

const KernelTable& scalar_kernels();
// nullptr when the variant is not compiled in or the CPU lacks the ISA.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

const KernelTable& active();
std::vector<const KernelTable*> available();

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot_f64(a.data(), b.data(), a.size() < b.size() ? a.size() : b.size());
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy_f64(a, x.data(), y.data(), x.size() < y.size() ? x.size() : y.size());
}

}  // namespace dpguard::simd
