#include "seqmosaic/plane_fitting.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "seqmosaic/error.hpp"

namespace seqmosaic {

Plane Plane::through(const Vec3& normal, const Vec3& point) {
  const Vec3 n = normal.normalized();
  return {n, n.dot(point)};
}

int default_min_inliers(std::size_t point_count) {
  return std::max(20, static_cast<int>(std::ceil(0.3 * static_cast<double>(point_count))));
}

Plane fit_plane_least_squares(std::span<const Vec3> points) {
  if (points.empty()) fail(ErrorKind::EmptyCloud, "cannot fit a plane to no points");
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : points) {
    const Vec3 d = p - centroid;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  return Plane::through(eig.eigenvectors().col(0), centroid);
}

namespace {

struct Support {
  std::vector<int> inliers;
  double sum_sq = 0.0;
};

Support support_of(const Plane& plane, std::span<const Vec3> points, double threshold) {
  Support s;
  for (int i = 0; i < static_cast<int>(points.size()); ++i) {
    const double r = plane.signed_distance(points[i]);
    if (std::abs(r) <= threshold) {
      s.inliers.push_back(i);
      s.sum_sq += r * r;
    }
  }
  return s;
}

Plane orient(Plane plane, std::span<const Vec3> viewpoints) {
  int above = 0;
  for (const auto& c : viewpoints) above += plane.signed_distance(c) > 0.0 ? 1 : -1;
  bool flip = false;
  if (!viewpoints.empty() && above != 0) {
    flip = above < 0;
  } else {
    Eigen::Index k = 0;
    plane.normal.cwiseAbs().maxCoeff(&k);
    flip = plane.normal[k] < 0.0;
  }
  if (flip) {
    plane.normal = -plane.normal;
    plane.offset = -plane.offset;
  }
  return plane;
}

}  // namespace

PlaneFitResult ransac_plane_fit(std::span<const Vec3> points, const PlaneFitParams& params,
                                std::span<const Vec3> viewpoints) {
  const int n = static_cast<int>(points.size());
  if (n < 3) fail(ErrorKind::TooFewPoints, "plane fit needs at least 3 points, got " + std::to_string(n));
  if (!(params.threshold > 0.0)) fail(ErrorKind::InvalidArgument, "plane fit threshold must be positive");

  double extent = 0.0;
  for (const auto& p : points) extent = std::max(extent, (p - points[0]).norm());
  const double area_eps = 1e-12 * std::max(extent * extent, 1e-300);

  std::mt19937_64 rng(params.seed);
  std::uniform_int_distribution<int> pick(0, n - 1);
  Support best;
  bool any = false;
  for (int it = 0; it < params.max_iterations; ++it) {
    const int i = pick(rng);
    int j = pick(rng);
    while (j == i) j = pick(rng);
    int k = pick(rng);
    while (k == i || k == j) k = pick(rng);
    const Vec3 cross = (points[j] - points[i]).cross(points[k] - points[i]);
    if (cross.norm() <= area_eps) continue;
    any = true;
    Support s = support_of(Plane::through(cross, points[i]), points, params.threshold);
    if (s.inliers.size() > best.inliers.size() ||
        (s.inliers.size() == best.inliers.size() && s.sum_sq < best.sum_sq)) {
      best = std::move(s);
    }
  }
  if (!any) fail(ErrorKind::DegenerateGeometry, "every plane hypothesis was collinear");
  if (static_cast<int>(best.inliers.size()) < params.min_inliers) {
    fail(ErrorKind::InsufficientInliers, "best plane has " + std::to_string(best.inliers.size()) +
                                             " inliers, need " + std::to_string(params.min_inliers));
  }

  std::vector<int> inliers = best.inliers;
  Plane plane;
  std::vector<Vec3> subset;
  for (int round = 0; round < 5; ++round) {
    subset.clear();
    for (int idx : inliers) subset.push_back(points[idx]);
    plane = fit_plane_least_squares(subset);
    Support refreshed = support_of(plane, points, params.threshold);
    if (refreshed.inliers == inliers || static_cast<int>(refreshed.inliers.size()) < params.min_inliers) break;
    inliers = std::move(refreshed.inliers);
  }
  if (subset.size() != inliers.size()) {
    subset.clear();
    for (int idx : inliers) subset.push_back(points[idx]);
    plane = fit_plane_least_squares(subset);
  }
  plane = orient(plane, viewpoints);

  PlaneFitResult result;
  result.plane = plane;
  auto& report = result.report;
  report.total_count = n;
  report.inlier_count = static_cast<int>(inliers.size());
  report.normal = plane.normal;
  Vec3 centroid = Vec3::Zero();
  double sum_sq = 0.0;
  for (const auto& p : subset) {
    centroid += p;
    const double r = plane.signed_distance(p);
    sum_sq += r * r;
  }
  report.centroid = centroid / static_cast<double>(subset.size());
  report.rms_residual = std::sqrt(sum_sq / static_cast<double>(subset.size()));
  report.inliers = std::move(inliers);
  return result;
}

Plane horizontal_plane_from_ahrs(std::span<const Vec3> points, const Vec3& gravity_direction) {
  if (points.empty()) fail(ErrorKind::EmptyCloud, "horizontal plane needs at least one point");
  if (std::abs(gravity_direction.norm() - 1.0) > 1e-6) {
    fail(ErrorKind::InvalidArgument, "gravity direction must be a unit vector");
  }
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());
  return Plane::through(-gravity_direction, centroid);
}

Planarity planarity_check(const PlaneFitReport& report, double scene_scale, const PlanarityConfig& config) {
  const double fraction =
      report.total_count > 0 ? static_cast<double>(report.inlier_count) / report.total_count : 0.0;
  if (report.rms_residual <= config.rel_residual_max * scene_scale && fraction >= config.min_inlier_fraction) {
    return Planarity::Accept;
  }
  return Planarity::SkipProjection;
}

double normal_angle(const Vec3& a, const Vec3& b) {
  const double c = std::abs(a.normalized().dot(b.normalized()));
  const double s = a.normalized().cross(b.normalized()).norm();
  return std::atan2(s, c);
}

}  // namespace seqmosaic
