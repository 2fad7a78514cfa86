#pragma once

#include <filesystem>

#include "seqmosaic/image.hpp"

namespace seqmosaic {

/// Loads any 8/16-bit gray, gray+alpha, RGB or RGBA PNG as 8-bit RGB.
Image read_png(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const Image& image);

/// Writes RGBA with the validity mask as the alpha channel.
void write_png(const std::filesystem::path& path, const MaskedImage& image);

/// Loads an RGBA PNG into a masked image (alpha > 0 is valid).
MaskedImage read_png_masked(const std::filesystem::path& path);

}  // namespace seqmosaic
