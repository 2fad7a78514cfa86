#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "seqmosaic/camera_geometry.hpp"
#include "seqmosaic/image.hpp"
#include "seqmosaic/plane_fitting.hpp"

namespace seqmosaic {

struct GridSpec {
  int cols = 150;
  int rows = 100;
};

struct CloudPoint {
  Vec3 position;
  Rgb color;
};

struct CloudChunk {
  int frame_id = 0;
  int segment_id = 0;
  std::vector<CloudPoint> points;
  Plane plane;
};

/// Intersects the rays of a uniform grid of pixel centers (raster borders
/// included) with the plane. Rays hitting behind the camera or within 2
/// degrees of grazing are dropped. Throws EmptyChunk when none survive.
CloudChunk project_image_plane(const Image& image, const Pose& pose, const CameraModel& camera, const Plane& plane,
                               const GridSpec& grid, int frame_id = 0, int segment_id = 0);

/// Append-only store of chunks, at most one per frame.
class CloudStore {
 public:
  /// Throws DuplicateFrame when the frame id is already present.
  void accumulate(CloudChunk chunk);
  const CloudChunk* find_frame(int frame_id) const;
  std::vector<const CloudChunk*> segment(int segment_id) const;
  const std::vector<CloudChunk>& chunks() const noexcept { return chunks_; }
  std::size_t point_count() const noexcept { return point_count_; }

 private:
  std::vector<CloudChunk> chunks_;
  std::map<int, std::size_t> by_frame_;
  std::size_t point_count_ = 0;
};

enum class PlyFormat { BinaryLittleEndian, Ascii };

/// x, y, z as float64 and red, green, blue as uint8. Throws EmptyCloud for no
/// points and IoFailure when the file cannot be written.
void export_ply(std::span<const CloudPoint> points, const std::filesystem::path& path,
                PlyFormat format = PlyFormat::BinaryLittleEndian);
void export_ply(const CloudStore& store, const std::filesystem::path& path,
                PlyFormat format = PlyFormat::BinaryLittleEndian);

}  // namespace seqmosaic
