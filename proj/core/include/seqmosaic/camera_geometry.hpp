#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "seqmosaic/image.hpp"

namespace seqmosaic {

class KeyValueFile;

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

/// Brown-Conrady lens model: three radial and two tangential terms applied
/// to normalized image coordinates.
struct DistortionCoefficients {
  double k1 = 0.0;
  double k2 = 0.0;
  double k3 = 0.0;
  double p1 = 0.0;
  double p2 = 0.0;

  bool is_zero() const noexcept { return k1 == 0.0 && k2 == 0.0 && k3 == 0.0 && p1 == 0.0 && p2 == 0.0; }
  friend bool operator==(const DistortionCoefficients&, const DistortionCoefficients&) = default;
};

struct CameraModel {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
  DistortionCoefficients distortion;

  /// Throws InvalidArgument unless fx, fy > 0 and the principal point lies
  /// strictly inside the raster.
  void validate() const;

  Mat3 intrinsic_matrix() const;
  double mean_focal() const noexcept { return 0.5 * (fx + fy); }

  /// Camera for the image box-downscaled by `divisor` (pixel-center origin).
  CameraModel downscaled(int divisor) const;

  friend bool operator==(const CameraModel&, const CameraModel&) = default;
};

CameraModel camera_from_key_values(const KeyValueFile& file);
CameraModel load_camera(const std::filesystem::path& path);
std::string camera_to_text(const CameraModel& camera);

/// Rigid camera-to-world transform: x_world = rotation * x_camera + center.
class Pose {
 public:
  Pose() : rotation_(Mat3::Identity()), center_(Vec3::Zero()) {}

  /// Rejects rotations that are not orthonormal with det = +1 (1e-9 tolerance).
  Pose(const Mat3& rotation, const Vec3& center);

  const Mat3& rotation() const noexcept { return rotation_; }
  const Vec3& center() const noexcept { return center_; }

  Vec3 to_camera(const Vec3& world) const { return rotation_.transpose() * (world - center_); }
  Vec3 to_world(const Vec3& camera) const { return rotation_ * camera + center_; }

  /// Right-perturbation update: R <- R * exp([w]x), C <- C + dc, with
  /// delta = (w, dc).
  Pose retract(const Vec6& delta) const;

  /// Applies the world-frame rigid motion x -> motion_rotation * x + motion_translation.
  Pose transformed(const Mat3& motion_rotation, const Vec3& motion_translation) const;

  friend bool operator==(const Pose& a, const Pose& b) {
    return a.rotation_ == b.rotation_ && a.center_ == b.center_;
  }

 private:
  Mat3 rotation_;
  Vec3 center_;
};

Mat3 rotation_exp(const Vec3& omega);
Vec3 rotation_log(const Mat3& rotation);
Mat3 skew(const Vec3& v);

/// Raster coordinate; (0,0) is the center of the top-left pixel.
struct PixelCoord {
  double u = 0.0;
  double v = 0.0;

  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length

  Vec3 at(double t) const { return origin + t * direction; }
};

Vec2 distort_normalized(const Vec2& xy, const DistortionCoefficients& d);

/// Fixed-point inversion of distort_normalized; throws NoConvergence when the
/// residual is still above `tolerance` after `max_iterations`.
Vec2 undistort_normalized(const Vec2& distorted, const DistortionCoefficients& d, int max_iterations = 20,
                          double tolerance = 1e-6);

/// Throws BehindCamera when the camera-frame depth is <= 1e-12.
PixelCoord project(const Vec3& point, const Pose& pose, const CameraModel& camera, bool apply_distortion);

/// Ideal-pinhole location of an observed (distorted) pixel.
PixelCoord undistort_pixel(const PixelCoord& pixel, const CameraModel& camera);

/// Forward lens model: ideal-pinhole pixel -> observed pixel.
PixelCoord distort_pixel(const PixelCoord& pixel, const CameraModel& camera);

/// Ray through an observed pixel; the pixel is undistorted first.
Ray unproject(const PixelCoord& pixel, const Pose& pose, const CameraModel& camera);

/// Ray through a pixel that is already on the ideal pinhole raster.
Ray unproject_undistorted(const PixelCoord& pixel, const Pose& pose, const CameraModel& camera);

/// Bilinear interpolation over the four neighbouring pixel centers. Returns
/// nothing when that 2x2 support leaves the raster.
std::optional<Vec3> sample_bilinear(const Image& image, const PixelCoord& pixel);

}  // namespace seqmosaic
