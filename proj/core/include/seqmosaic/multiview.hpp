#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "seqmosaic/camera_geometry.hpp"

namespace seqmosaic {

/// Relative motion between two camera frames: x2 = rotation * x1 + translation.
struct RelativePose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

/// Reprojection of a world point through an ideal pinhole together with the
/// derivatives w.r.t. the pose perturbation (rotation, center) used by
/// Pose::retract and w.r.t. the point.
struct ProjectionJacobian {
  Vec2 pixel;
  Eigen::Matrix<double, 2, 6> d_pose;
  Eigen::Matrix<double, 2, 3> d_point;
  double depth = 0.0;
};

ProjectionJacobian projection_jacobian(const Pose& pose, const Vec3& point, const CameraModel& camera);

/// Up to ten essential matrices consistent with five normalized
/// correspondences (x2^T E x1 = 0), unit Frobenius norm.
std::vector<Mat3> essential_five_point(std::span<const Vec2, 5> x1, std::span<const Vec2, 5> x2);

/// First-order geometric (Sampson) error, squared, in normalized units.
double sampson_error(const Mat3& essential, const Vec2& x1, const Vec2& x2);

/// The four (rotation, translation) factorizations of an essential matrix.
std::vector<RelativePose> decompose_essential(const Mat3& essential);

/// Linear (DLT) triangulation from normalized observations in each posed view.
std::optional<Vec3> triangulate(std::span<const Pose> poses, std::span<const Vec2> normalized);

/// Gauss-Newton refinement of a point against fixed poses (ideal pixels).
Vec3 refine_point(const Vec3& initial, std::span<const Pose> poses, std::span<const PixelCoord> pixels,
                  const CameraModel& camera, int iterations = 10);

struct EssentialEstimate {
  Mat3 essential;
  std::vector<int> inliers;
  /// Distinct hypotheses whose support is within 10% of the best, best first.
  std::vector<Mat3> candidates;
};

struct RansacParams {
  double threshold = 1.0;  // pixels
  double confidence = 0.999;
  int max_iterations = 1000;
  std::uint64_t seed = 1;
};

/// Robust essential matrix from undistorted pixel correspondences.
std::optional<EssentialEstimate> estimate_essential(std::span<const PixelCoord> pixels_1,
                                                    std::span<const PixelCoord> pixels_2,
                                                    const CameraModel& camera, const RansacParams& params);

/// Chooses the factorization of `essential` with the most points in front of
/// both cameras. Camera 1 is the world frame; returns camera 2's pose and
/// the number of points passing the cheirality test.
std::pair<Pose, int> pose_from_essential(const Mat3& essential, std::span<const PixelCoord> pixels_1,
                                         std::span<const PixelCoord> pixels_2, const CameraModel& camera);

/// Perspective-three-point: camera poses placing each world point on its
/// bearing (unit vectors, camera frame).
std::vector<Pose> solve_p3p(std::span<const Vec3, 3> bearings, std::span<const Vec3, 3> world);

struct Resection {
  Pose pose;
  std::vector<int> inliers;
};

/// RANSAC over P3P followed by reprojection-error refinement on the inliers.
std::optional<Resection> resect(std::span<const Vec3> world, std::span<const PixelCoord> pixels,
                                const CameraModel& camera, const RansacParams& params);

/// Levenberg-Marquardt pose refinement minimizing ideal-pixel reprojection error.
Pose refine_pose(const Pose& initial, std::span<const Vec3> world, std::span<const PixelCoord> pixels,
                 const CameraModel& camera, int iterations = 20);

}  // namespace seqmosaic
