#include "dpguard/image.hpp"

#include <png.h>
#include <stdio.h>
// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

#include <csetjmp>
#include <algorithm>
#include <cmath>
#include <cstring>

#include "dpguard/digest.hpp"
#include "dpguard/error.hpp"
#include "dpguard/simd/kernels.hpp"

namespace dpguard {
namespace {

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw Error(ErrorKind::kDecode, std::string("png: ") + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Image out(static_cast<int>(img.width), static_cast<int>(img.height));
  png_color white{255, 255, 255};
  if (!png_image_finish_read(&img, &white, out.rgb.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw Error(ErrorKind::kDecode, "png: " + msg);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, mgr->message);
  std::longjmp(mgr->jump, 1);
}

Image decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.message[0] = '\0';
  Image out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(ErrorKind::kDecode, std::string("jpeg: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = static_cast<int>(cinfo.output_width);
  out.height = static_cast<int>(cinfo.output_height);
  out.rgb.assign(out.pixel_count() * 3, 0);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

// Overlap of source cell [i, i+1) with output cell j scaled into source units.
struct Span1D {
  int first;
  std::vector<float> weights;
};

std::vector<Span1D> area_weights(int src, int dst) {
  std::vector<Span1D> spans(static_cast<std::size_t>(dst));
  const double scale = static_cast<double>(src) / dst;
  for (int j = 0; j < dst; ++j) {
    const double lo = j * scale;
    const double hi = (j + 1) * scale;
    const int first = static_cast<int>(lo);
    const int last = std::min(src - 1, static_cast<int>(std::ceil(hi)) - 1);
    Span1D& s = spans[static_cast<std::size_t>(j)];
    s.first = first;
    for (int i = first; i <= last; ++i) {
      const double overlap = std::min<double>(hi, i + 1) - std::max<double>(lo, i);
      s.weights.push_back(static_cast<float>(overlap / scale));
    }
  }
  return spans;
}

}  // namespace

ImageFormat sniff_format(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngMagic, 8) == 0) return ImageFormat::kPng;
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    return ImageFormat::kJpeg;
  }
  return ImageFormat::kUnknown;
}

Image decode_image(std::span<const std::uint8_t> bytes) {
  switch (sniff_format(bytes)) {
    case ImageFormat::kPng: return decode_png(bytes);
    case ImageFormat::kJpeg: return decode_jpeg(bytes);
    case ImageFormat::kUnknown: break;
  }
  throw Error(ErrorKind::kDecode, "unrecognized image format (expected PNG or JPEG)");
}

Image read_image(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_image(bytes);
  } catch (const Error& e) {
    throw Error(ErrorKind::kDecode, path + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.rgb.data(), 0, nullptr)) {
    throw Error(ErrorKind::kRuntime, std::string("png encode: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.rgb.data(), 0, nullptr)) {
    throw Error(ErrorKind::kRuntime, std::string("png encode: ") + img.message);
  }
  out.resize(size);
  return out;
}

void write_png(const std::string& path, const Image& image) {
  const auto bytes = encode_png(image);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

GrayPlane to_gray(const Image& image) {
  GrayPlane g{image.width, image.height, std::vector<float>(image.pixel_count())};
  simd::active().rgb_to_gray(image.rgb.data(), g.values.data(), image.pixel_count());
  return g;
}

GrayPlane resize_area(const GrayPlane& src, int out_width, int out_height) {
  if (src.width <= 0 || src.height <= 0) throw Error(ErrorKind::kDecode, "resize of empty image");
  const auto cols = area_weights(src.width, out_width);
  const auto rows = area_weights(src.height, out_height);
  const auto& k = simd::active();

  // Horizontal pass: every source row to out_width columns.
  std::vector<float> horiz(static_cast<std::size_t>(src.height) * out_width, 0.0f);
  for (int y = 0; y < src.height; ++y) {
    const float* in = &src.values[static_cast<std::size_t>(y) * src.width];
    float* out = &horiz[static_cast<std::size_t>(y) * out_width];
    for (int x = 0; x < out_width; ++x) {
      const Span1D& s = cols[static_cast<std::size_t>(x)];
      float acc = 0.0f;
      for (std::size_t t = 0; t < s.weights.size(); ++t) acc += s.weights[t] * in[s.first + t];
      out[x] = acc;
    }
  }
  // Vertical pass as weighted row accumulation.
  GrayPlane out{out_width, out_height,
                std::vector<float>(static_cast<std::size_t>(out_width) * out_height, 0.0f)};
  for (int y = 0; y < out_height; ++y) {
    const Span1D& s = rows[static_cast<std::size_t>(y)];
    float* dst = &out.values[static_cast<std::size_t>(y) * out_width];
    for (std::size_t t = 0; t < s.weights.size(); ++t) {
      k.axpy_f32(s.weights[t], &horiz[static_cast<std::size_t>(s.first + t) * out_width], dst,
                 static_cast<std::size_t>(out_width));
    }
  }
  return out;
}

std::vector<float> resize_area_planar(const Image& image, int out_width, int out_height) {
  std::vector<float> planar;
  planar.reserve(static_cast<std::size_t>(out_width) * out_height * 3);
  for (int c = 0; c < 3; ++c) {
    GrayPlane channel{image.width, image.height, std::vector<float>(image.pixel_count())};
    for (std::size_t i = 0; i < image.pixel_count(); ++i) channel.values[i] = image.rgb[3 * i + c];
    const GrayPlane r = resize_area(channel, out_width, out_height);
    planar.insert(planar.end(), r.values.begin(), r.values.end());
  }
  return planar;
}

}  // namespace dpguard
