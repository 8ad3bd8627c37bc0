#pragma once

#include "dpguard/simd/kernels.hpp"

namespace dpguard::simd::detail {

// Luma weights shared by every variant.
inline constexpr float kLumaR = 0.299f;
inline constexpr float kLumaG = 0.587f;
inline constexpr float kLumaB = 0.114f;
inline constexpr float kInv255 = 1.0f / 255.0f;

const KernelTable* avx2_table();
const KernelTable* neon_table();

}  // namespace dpguard::simd::detail
