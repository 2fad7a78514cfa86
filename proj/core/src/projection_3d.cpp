#include "seqmosaic/projection_3d.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>

#include "seqmosaic/error.hpp"

namespace seqmosaic {

CloudChunk project_image_plane(const Image& image, const Pose& pose, const CameraModel& camera, const Plane& plane,
                               const GridSpec& grid, int frame_id, int segment_id) {
  if (grid.cols < 2 || grid.rows < 2) fail(ErrorKind::InvalidArgument, "grid needs at least 2 x 2 nodes");
  if (image.empty()) fail(ErrorKind::InvalidArgument, "cannot project an empty image");
  if (std::abs(plane.signed_distance(pose.center())) <= 1e-9) {
    fail(ErrorKind::CameraOnPlane, "camera center lies on the projection plane");
  }
  const double grazing = std::sin(2.0 * 3.14159265358979323846 / 180.0);
  const double du = static_cast<double>(image.width() - 1) / (grid.cols - 1);
  const double dv = static_cast<double>(image.height() - 1) / (grid.rows - 1);

  CloudChunk chunk;
  chunk.frame_id = frame_id;
  chunk.segment_id = segment_id;
  chunk.plane = plane;
  chunk.points.reserve(static_cast<std::size_t>(grid.cols) * grid.rows);
  for (int j = 0; j < grid.rows; ++j) {
    for (int i = 0; i < grid.cols; ++i) {
      const PixelCoord node{i * du, j * dv};
      PixelCoord ideal;
      try {
        ideal = undistort_pixel(node, camera);
      } catch (const Error&) {
        continue;
      }
      const Ray ray = unproject_undistorted(ideal, pose, camera);
      const double denom = plane.normal.dot(ray.direction);
      if (!(std::abs(denom) > grazing)) continue;
      const double t = (plane.offset - plane.normal.dot(ray.origin)) / denom;
      if (!(t > 0.0)) continue;
      const auto color = sample_bilinear(image, node);
      if (!color) continue;
      chunk.points.push_back({plane.project(ray.at(t)), to_rgb(*color)});
    }
  }
  if (chunk.points.empty()) fail(ErrorKind::EmptyChunk, "no grid ray reaches the plane");
  return chunk;
}

void CloudStore::accumulate(CloudChunk chunk) {
  if (by_frame_.count(chunk.frame_id) != 0) {
    fail(ErrorKind::DuplicateFrame, "frame " + std::to_string(chunk.frame_id) + " already accumulated");
  }
  by_frame_[chunk.frame_id] = chunks_.size();
  point_count_ += chunk.points.size();
  chunks_.push_back(std::move(chunk));
}

const CloudChunk* CloudStore::find_frame(int frame_id) const {
  const auto it = by_frame_.find(frame_id);
  return it == by_frame_.end() ? nullptr : &chunks_[it->second];
}

std::vector<const CloudChunk*> CloudStore::segment(int segment_id) const {
  std::vector<const CloudChunk*> out;
  for (const auto& c : chunks_) {
    if (c.segment_id == segment_id) out.push_back(&c);
  }
  return out;
}

namespace {

void put_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  char buf[8];
  std::memcpy(buf, &bits, 8);
  out.append(buf, 8);
}

void write_ply(const std::filesystem::path& path, std::size_t count, PlyFormat format,
               const std::function<void(std::string&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::IoFailure, "cannot open " + path.string() + " for writing");
  out << "ply\n"
      << (format == PlyFormat::Ascii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n")
      << "element vertex " << count << "\n"
      << "property double x\nproperty double y\nproperty double z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "end_header\n";
  std::string buffer;
  body(buffer);
  out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
  if (!out) fail(ErrorKind::IoFailure, "failed writing " + path.string());
}

void append_point(std::string& out, const CloudPoint& p, PlyFormat format) {
  if (format == PlyFormat::Ascii) {
    char line[160];
    std::snprintf(line, sizeof(line), "%.17g %.17g %.17g %u %u %u\n", p.position.x(), p.position.y(),
                  p.position.z(), p.color.r, p.color.g, p.color.b);
    out += line;
    return;
  }
  put_le(out, p.position.x());
  put_le(out, p.position.y());
  put_le(out, p.position.z());
  out.push_back(static_cast<char>(p.color.r));
  out.push_back(static_cast<char>(p.color.g));
  out.push_back(static_cast<char>(p.color.b));
}

}  // namespace

void export_ply(std::span<const CloudPoint> points, const std::filesystem::path& path, PlyFormat format) {
  if (points.empty()) fail(ErrorKind::EmptyCloud, "refusing to write an empty point cloud");
  write_ply(path, points.size(), format, [&](std::string& out) {
    out.reserve(points.size() * 27);
    for (const auto& p : points) append_point(out, p, format);
  });
}

void export_ply(const CloudStore& store, const std::filesystem::path& path, PlyFormat format) {
  if (store.point_count() == 0) fail(ErrorKind::EmptyCloud, "refusing to write an empty point cloud");
  write_ply(path, store.point_count(), format, [&](std::string& out) {
    out.reserve(store.point_count() * 27);
    for (const auto& chunk : store.chunks()) {
      for (const auto& p : chunk.points) append_point(out, p, format);
    }
  });
}

}  // namespace seqmosaic
