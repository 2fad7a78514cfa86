#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqmosaic/camera_geometry.hpp"
#include "seqmosaic/image.hpp"
#include "seqmosaic/plane_fitting.hpp"

namespace seqmosaic {

/// Right-handed in-plane basis; plane coordinates (a, b) name the point
/// origin + a * u_axis + b * v_axis.
struct PlaneFrame {
  Vec3 origin = Vec3::Zero();
  Vec3 u_axis = Vec3::UnitX();
  Vec3 v_axis = Vec3::UnitY();
  Vec3 normal = Vec3::UnitZ();

  Vec2 to_plane(const Vec3& world) const {
    const Vec3 d = world - origin;
    return {d.dot(u_axis), d.dot(v_axis)};
  }
  Vec3 to_world(double a, double b) const { return origin + a * u_axis + b * v_axis; }
  Plane plane() const { return {normal, normal.dot(origin)}; }
};

/// Origin at the inlier centroid projected onto the plane; u from the hint
/// (world Y when the hint is within 5 degrees of the normal); v = n x u.
PlaneFrame build_plane_frame(const Plane& plane, std::span<const Vec3> inliers, const Vec3& hint_axis);

/// Plane coordinates (a, b, 1) to homogeneous ideal-pinhole pixels.
struct Homography {
  Mat3 h = Mat3::Identity();
  double front_sign = 1.0;  // sign of w for points in front of the camera

  /// Nothing when the point is on or behind the camera.
  std::optional<PixelCoord> apply(double a, double b) const;
};

/// Throws CameraOnPlane when the camera center lies on the plane.
Homography plane_to_image_homography(const Pose& pose, const CameraModel& camera, const PlaneFrame& frame);

/// Pixel-to-world affine: x = a*col + b*row + c, y = d*col + e*row + f, with
/// (c, f) at the center of the top-left pixel.
struct WorldFile {
  double a = 1.0;
  double d = 0.0;
  double b = 0.0;
  double e = -1.0;
  double c = 0.0;
  double f = 0.0;

  Vec2 apply(double col, double row) const { return {a * col + b * row + c, d * col + e * row + f}; }
  std::optional<Vec2> invert(double x, double y) const;
  /// Six lines A, D, B, E, C, F, fixed point with ten decimals.
  std::string to_text() const;
  static WorldFile parse(const std::string& text);
  static WorldFile load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// Rectified image on a segment's pixel lattice. Lattice cell (i, j) is
/// centered at plane coordinates (i * gsd, -j * gsd).
struct Tile {
  MaskedImage raster;
  long long col0 = 0;  // lattice index of the top-left pixel
  long long row0 = 0;
  double gsd = 0.0;

  WorldFile world_file() const;
};

struct RectifyOptions {
  int max_side = 8192;  // tiles are clipped to this many pixels per side
};

/// Inverse-mapping resample of `image` onto the lattice of spacing gsd.
/// Throws EmptyFootprint when no part of the image sees the plane.
Tile rectify_image(const Image& image, const Homography& homography, const CameraModel& camera, double gsd,
                   const RectifyOptions& options = {});

/// Mean ground footprint of one pixel at the image center.
double ground_sample_distance(const Pose& pose, const CameraModel& camera, const Plane& plane);

enum class BlendRule { LastWriteWins, Feather };

class MosaicSegment {
 public:
  MosaicSegment(int id, const PlaneFrame& frame, double gsd, BlendRule blend = BlendRule::LastWriteWins,
                int max_side = 16384);

  int id() const noexcept { return id_; }
  const PlaneFrame& plane_frame() const noexcept { return frame_; }
  double gsd() const noexcept { return gsd_; }
  BlendRule blend() const noexcept { return blend_; }
  const MaskedImage& canvas() const noexcept { return canvas_; }
  long long col0() const noexcept { return col0_; }
  long long row0() const noexcept { return row0_; }
  /// Plane coordinates of the top-left canvas pixel center.
  Vec2 canvas_origin() const { return {static_cast<double>(col0_) * gsd_, -static_cast<double>(row0_) * gsd_}; }
  const std::vector<int>& frames() const noexcept { return frames_; }
  bool empty() const noexcept { return frames_.empty(); }

  /// Whether compositing `tile` keeps the canvas within the size cap.
  bool fits(const Tile& tile) const;
  /// Grows the canvas to cover the tile and blends it in.
  void composite(const Tile& tile, int frame_id);

  Vec2 plane_to_pixel(const Vec2& ab) const;
  Vec2 pixel_to_plane(const Vec2& col_row) const;
  WorldFile world_file() const;

 private:
  void grow(long long col0, long long row0, long long col1, long long row1);

  int id_;
  PlaneFrame frame_;
  double gsd_;
  BlendRule blend_;
  int max_side_;
  MaskedImage canvas_;
  std::vector<float> accum_;  // feather: r, g, b, weight per pixel
  long long col0_ = 0;
  long long row0_ = 0;
  std::vector<int> frames_;
};

/// Chamfer distance (in pixels, >= 1 inside) to the nearest invalid pixel or raster border.
std::vector<float> edge_distance(const MaskedImage& image);

enum class SegmentDecision { Continue, Reinitialize };

struct ReinitConfig {
  double max_normal_change_deg = 10.0;
  double rel_residual_max = 0.05;
  double max_offset_change = 0.15;
};

/// d_projected is the new normal applied to the new inlier centroid projected
/// onto the current plane, so the offset term measures how far the new
/// support has moved off the current plane.
SegmentDecision segment_reinit_check(const Plane& current, const PlaneFitResult& new_fit, double scene_scale,
                                     const ReinitConfig& config);

void write_tile(const std::filesystem::path& directory, const std::string& stem, const Tile& tile);
void write_segment(const std::filesystem::path& directory, const MosaicSegment& segment);
std::string segment_manifest_entry(const MosaicSegment& segment);

}  // namespace seqmosaic
