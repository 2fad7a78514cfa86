#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace seqmosaic {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Interleaved 8-bit RGB raster, row-major, top-left pixel first.
class Image {
 public:
  Image() = default;
  Image(int width, int height, Rgb fill = {});

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return width_ == 0 || height_ == 0; }

  Rgb at(int x, int y) const noexcept {
    const std::uint8_t* p = &data_[index(x, y)];
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, Rgb c) noexcept {
    std::uint8_t* p = &data_[index(x, y)];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }
  const std::uint8_t* pixel(int x, int y) const noexcept { return &data_[index(x, y)]; }

  std::span<const std::uint8_t> bytes() const noexcept { return data_; }
  std::span<std::uint8_t> bytes() noexcept { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)) * 3;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Single-channel float raster used by feature detection and tracking.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, float fill = 0.0F)
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {}

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return width_ == 0 || height_ == 0; }

  float at(int x, int y) const noexcept { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  float& at(int x, int y) noexcept { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  /// Bilinear sample; caller guarantees 0 <= x <= w-1 and 0 <= y <= h-1.
  float sample(double x, double y) const noexcept;

  std::span<const float> values() const noexcept { return data_; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

GrayImage to_gray(const Image& image);

/// RGB raster plus a per-pixel validity mask (0 = transparent).
struct MaskedImage {
  Image image;
  std::vector<std::uint8_t> mask;

  MaskedImage() = default;
  MaskedImage(int width, int height)
      : image(width, height),
        mask(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0) {}

  int width() const noexcept { return image.width(); }
  int height() const noexcept { return image.height(); }
  bool valid(int x, int y) const noexcept {
    return mask[static_cast<std::size_t>(y) * static_cast<std::size_t>(image.width()) + x] != 0;
  }
  void set_valid(int x, int y, bool v) noexcept {
    mask[static_cast<std::size_t>(y) * static_cast<std::size_t>(image.width()) + x] = v ? 255 : 0;
  }
  std::size_t valid_count() const noexcept;
};

inline std::uint8_t clamp_to_byte(double v) noexcept {
  if (!(v > 0.0)) return 0;
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(v + 0.5);
}

inline Rgb to_rgb(const Eigen::Vector3d& c) noexcept {
  return {clamp_to_byte(c.x()), clamp_to_byte(c.y()), clamp_to_byte(c.z())};
}

}  // namespace seqmosaic
