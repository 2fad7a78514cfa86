#include "seqmosaic/image_io.hpp"

#include <png.h>

#include <cstring>
#include <vector>

#include "seqmosaic/error.hpp"

namespace seqmosaic {
namespace {

std::vector<std::uint8_t> read_raw(const std::filesystem::path& path, std::uint32_t format, int& width,
                                   int& height) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&png, path.c_str()) == 0) {
    fail(ErrorKind::IoFailure, "cannot read PNG '" + path.string() + "': " + png.message);
  }
  png.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png));
  if (png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr) == 0) {
    const std::string message = png.message;
    png_image_free(&png);
    fail(ErrorKind::IoFailure, "cannot decode PNG '" + path.string() + "': " + message);
  }
  width = static_cast<int>(png.width);
  height = static_cast<int>(png.height);
  return buffer;
}

void write_raw(const std::filesystem::path& path, const std::uint8_t* data, int width, int height,
               std::uint32_t format) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(width);
  png.height = static_cast<png_uint_32>(height);
  png.format = format;
  if (png_image_write_to_file(&png, path.c_str(), 0, data, 0, nullptr) == 0) {
    fail(ErrorKind::IoFailure, "cannot write PNG '" + path.string() + "': " + png.message);
  }
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  int width = 0;
  int height = 0;
  const auto raw = read_raw(path, PNG_FORMAT_RGB, width, height);
  Image image(width, height);
  std::memcpy(image.bytes().data(), raw.data(), raw.size());
  return image;
}

MaskedImage read_png_masked(const std::filesystem::path& path) {
  int width = 0;
  int height = 0;
  const auto raw = read_raw(path, PNG_FORMAT_RGBA, width, height);
  MaskedImage out(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::uint8_t* p = &raw[(static_cast<std::size_t>(y) * width + x) * 4];
      out.image.set(x, y, {p[0], p[1], p[2]});
      out.set_valid(x, y, p[3] != 0);
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.empty()) fail(ErrorKind::IoFailure, "refusing to write empty image '" + path.string() + "'");
  write_raw(path, image.bytes().data(), image.width(), image.height(), PNG_FORMAT_RGB);
}

void write_png(const std::filesystem::path& path, const MaskedImage& image) {
  if (image.image.empty()) fail(ErrorKind::IoFailure, "refusing to write empty image '" + path.string() + "'");
  std::vector<std::uint8_t> rgba(static_cast<std::size_t>(image.width()) * image.height() * 4);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      std::uint8_t* q = &rgba[(static_cast<std::size_t>(y) * image.width() + x) * 4];
      const std::uint8_t* p = image.image.pixel(x, y);
      q[0] = p[0];
      q[1] = p[1];
      q[2] = p[2];
      q[3] = image.valid(x, y) ? 255 : 0;
    }
  }
  write_raw(path, rgba.data(), image.width(), image.height(), PNG_FORMAT_RGBA);
}

}  // namespace seqmosaic
