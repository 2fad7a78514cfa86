#include "seqmosaic/image.hpp"

#include <algorithm>
#include <cmath>

namespace seqmosaic {

Image::Image(int width, int height, Rgb fill)
    : width_(width), height_(height),
      data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3) {
  for (std::size_t i = 0; i < data_.size(); i += 3) {
    data_[i] = fill.r;
    data_[i + 1] = fill.g;
    data_[i + 2] = fill.b;
  }
}

float GrayImage::sample(double x, double y) const noexcept {
  const int x0 = std::min(static_cast<int>(std::floor(x)), width_ - 1);
  const int y0 = std::min(static_cast<int>(std::floor(y)), height_ - 1);
  const int x1 = std::min(x0 + 1, width_ - 1);
  const int y1 = std::min(y0 + 1, height_ - 1);
  const float fx = static_cast<float>(x - x0);
  const float fy = static_cast<float>(y - y0);
  const float top = at(x0, y0) + fx * (at(x1, y0) - at(x0, y0));
  const float bottom = at(x0, y1) + fx * (at(x1, y1) - at(x0, y1));
  return top + fy * (bottom - top);
}

GrayImage to_gray(const Image& image) {
  GrayImage gray(image.width(), image.height());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const std::uint8_t* p = image.pixel(x, y);
      gray.at(x, y) = 0.299F * p[0] + 0.587F * p[1] + 0.114F * p[2];
    }
  }
  return gray;
}

std::size_t MaskedImage::valid_count() const noexcept {
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));
}

}  // namespace seqmosaic
