#include <bit>
#include <cmath>
#include <filesystem>

#include <spdlog/spdlog.h>

#include "dpguard/error.hpp"
#include "dpguard/harvester.hpp"

namespace dpguard::harvester {

std::uint64_t dhash(const Image& image) {
  if (image.width <= 0 || image.height <= 0) throw Error(ErrorKind::kDecode, "cannot hash an empty image");
  const GrayPlane small = resize_area(to_gray(image), 9, 8);
  std::uint64_t bits = 0;
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      const long left = std::lround(small.values[static_cast<std::size_t>(y * 9 + x)] * 255.0f);
      const long right = std::lround(small.values[static_cast<std::size_t>(y * 9 + x + 1)] * 255.0f);
      bits = (bits << 1) | (left > right ? 1u : 0u);
    }
  }
  return bits;
}

std::uint64_t dhash_file(const std::string& path) { return dhash(read_image(path)); }

double perceptual_similarity(std::uint64_t a, std::uint64_t b) {
  return 1.0 - static_cast<double>(std::popcount(a ^ b)) / 64.0;
}

std::vector<std::string> size_filter(const std::vector<std::string>& files, std::uintmax_t min_bytes) {
  std::vector<std::string> kept;
  for (const auto& f : files) {
    std::error_code ec;
    const auto size = std::filesystem::file_size(f, ec);
    if (ec) {
      spdlog::warn("size filter: cannot stat {}: {}", f, ec.message());
      continue;
    }
    if (size > min_bytes) kept.push_back(f);
  }
  return kept;
}

}  // namespace dpguard::harvester
