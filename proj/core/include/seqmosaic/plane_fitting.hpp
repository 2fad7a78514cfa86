#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "seqmosaic/camera_geometry.hpp"

namespace seqmosaic {

/// Points X with normal . X = offset.
struct Plane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;

  double signed_distance(const Vec3& x) const { return normal.dot(x) - offset; }
  Vec3 project(const Vec3& x) const { return x - signed_distance(x) * normal; }
  static Plane through(const Vec3& normal, const Vec3& point);
};

struct PlaneFitReport {
  int inlier_count = 0;
  int total_count = 0;
  double rms_residual = 0.0;  // over inliers
  Vec3 normal = Vec3::UnitZ();
  Vec3 centroid = Vec3::Zero();  // of the inliers
  std::vector<int> inliers;
};

struct PlaneFitResult {
  Plane plane;
  PlaneFitReport report;
};

struct PlaneFitParams {
  double threshold = 0.02;  // meters
  int max_iterations = 500;
  int min_inliers = 20;
  std::uint64_t seed = 1;
};

/// max(20, 30% of the cloud).
int default_min_inliers(std::size_t point_count);

/// Best three-point hypothesis by inlier count (ties broken by lower inlier
/// RMS), refined by total least squares over its inliers. The normal points
/// toward the majority of `viewpoints` when given, otherwise its largest
/// component is made positive.
PlaneFitResult ransac_plane_fit(std::span<const Vec3> points, const PlaneFitParams& params,
                                std::span<const Vec3> viewpoints = {});

/// Plane through the centroid with normal = -gravity.
Plane horizontal_plane_from_ahrs(std::span<const Vec3> points, const Vec3& gravity_direction);

/// Total least squares plane (centroid, smallest covariance eigenvector).
Plane fit_plane_least_squares(std::span<const Vec3> points);

struct PlanarityConfig {
  double rel_residual_max = 0.05;
  double min_inlier_fraction = 0.5;
};

enum class Planarity { Accept, SkipProjection };

Planarity planarity_check(const PlaneFitReport& report, double scene_scale, const PlanarityConfig& config);

/// Angle between two unit normals, radians, ignoring sign.
double normal_angle(const Vec3& a, const Vec3& b);

}  // namespace seqmosaic
