#include "dpguard/classifier.hpp"
#include "dpguard/error.hpp"

#include <algorithm>

namespace dpguard::classifier {

FeatureVector featurize(const Image& image) {
  if (image.width <= 0 || image.height <= 0) {
    throw Error(ErrorKind::kDecode, "featurize: empty image");
  }
  FeatureVector fv;
  fv.values.reserve(kFeatureLength);

  const GrayPlane grid = resize_area(to_gray(image), kGridSide, kGridSide);
  for (float v : grid.values) fv.values.push_back(std::clamp(static_cast<double>(v), 0.0, 1.0));

  std::vector<double> hist(3 * kHistogramBins, 0.0);
  const std::size_t n = image.pixel_count();
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      hist[static_cast<std::size_t>(c * kHistogramBins + (image.rgb[3 * i + c] >> 4))] += 1.0;
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (double h : hist) fv.values.push_back(h * inv);
  return fv;
}

}  // namespace dpguard::classifier
