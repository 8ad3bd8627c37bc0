#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dpguard {

// 8-bit interleaved RGB raster.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::uint8_t* at(int x, int y) { return &rgb[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* at(int x, int y) const {
    return &rgb[(static_cast<std::size_t>(y) * width + x) * 3];
  }
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    auto* p = at(x, y);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
};

enum class ImageFormat { kUnknown, kPng, kJpeg };

ImageFormat sniff_format(std::span<const std::uint8_t> bytes);

// Decodes PNG or JPEG (any bit depth / color type) into RGB8. Alpha is
// composited over white. Throws Error(kDecode) on undecodable bytes.
Image decode_image(std::span<const std::uint8_t> bytes);
Image read_image(const std::string& path);

std::vector<std::uint8_t> encode_png(const Image& image);
void write_png(const std::string& path, const Image& image);

// Row-major grayscale plane in [0, 1] (0.299R + 0.587G + 0.114B) / 255.
struct GrayPlane {
  int width = 0;
  int height = 0;
  std::vector<float> values;
};

GrayPlane to_gray(const Image& image);

// Area-averaging resize: each output cell is the overlap-weighted mean of
// the source cells it covers. Works for both down- and up-scaling.
GrayPlane resize_area(const GrayPlane& src, int out_width, int out_height);

// Per-channel area resize of an RGB image into planar float [0, 255].
std::vector<float> resize_area_planar(const Image& image, int out_width, int out_height);

}  // namespace dpguard
