#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "seqmosaic/error.hpp"
#include "seqmosaic/plane_fitting.hpp"
#include "seqmosaic/trajectory_io.hpp"

using namespace seqmosaic;

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

// Points on z = 0.3 x + 0.1 y + 2 with optional gaussian noise and uniform outliers.
std::vector<Vec3> noisy_plane(std::mt19937_64& rng, int inliers, int outliers, double sigma) {
  std::uniform_real_distribution<double> u(-5.0, 5.0), off(-3.0, 3.0);
  std::normal_distribution<double> n(0.0, sigma > 0 ? sigma : 1.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < inliers; ++i) {
    const double x = u(rng), y = u(rng);
    pts.emplace_back(x, y, 0.3 * x + 0.1 * y + 2.0 + (sigma > 0 ? n(rng) : 0.0));
  }
  for (int i = 0; i < outliers; ++i) {
    const double x = u(rng), y = u(rng);
    pts.emplace_back(x, y, 0.3 * x + 0.1 * y + 2.0 + off(rng));
  }
  return pts;
}

const Vec3 kTrueNormal = Vec3(-0.3, -0.1, 1.0).normalized();
const double kTrueOffset = 2.0 * kTrueNormal.z();

double sum_sq(const std::vector<Vec3>& pts, const std::vector<int>& idx, const Vec3& n, double d) {
  double s = 0;
  for (int i : idx) s += std::pow(n.dot(pts[i]) - d, 2);
  return s;
}

}  // namespace

TEST(RansacPlane, ExactPointsGiveExactPlane) {
  std::mt19937_64 rng(1);
  const auto pts = noisy_plane(rng, 100, 0, 0.0);
  const auto fit = ransac_plane_fit(pts, {});
  EXPECT_EQ(fit.report.inlier_count, 100);
  EXPECT_LT(normal_angle(fit.plane.normal, kTrueNormal), 1e-9);
  EXPECT_NEAR(std::abs(fit.plane.offset), kTrueOffset, 1e-9);
  EXPECT_LT(fit.report.rms_residual, 1e-9);
  EXPECT_GT(fit.plane.normal.z(), 0.0);  // largest component positive without viewpoints
}

TEST(RansacPlane, ThirtyPercentOutliers) {
  std::mt19937_64 rng(2);
  const auto pts = noisy_plane(rng, 700, 300, 0.01);
  PlaneFitParams params;
  params.threshold = 0.03;
  const auto fit = ransac_plane_fit(pts, params);
  EXPECT_LT(normal_angle(fit.plane.normal, kTrueNormal), 0.5 * kDeg);
  EXPECT_NEAR(fit.plane.offset, kTrueOffset, 0.01);
  EXPECT_GE(fit.report.inlier_count, 690);
  EXPECT_EQ(fit.report.total_count, 1000);
  EXPECT_EQ(fit.report.inliers.size(), static_cast<std::size_t>(fit.report.inlier_count));
}

TEST(RansacPlane, TooFewPoints) {
  const std::vector<Vec3> pts{Vec3(0, 0, 0), Vec3(1, 0, 0)};
  try {
    ransac_plane_fit(pts, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TooFewPoints);
  }
}

TEST(RansacPlane, CollinearIsDegenerate) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 30; ++i) pts.emplace_back(i, 2.0 * i, 0.0);
  try {
    ransac_plane_fit(pts, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateGeometry);
  }
}

TEST(RansacPlane, InsufficientInliers) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 100; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  PlaneFitParams params;
  params.threshold = 1e-4;
  try {
    ransac_plane_fit(pts, params);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientInliers);
  }
}

TEST(RansacPlane, NormalFacesViewpoints) {
  std::mt19937_64 rng(3);
  const auto pts = noisy_plane(rng, 200, 0, 0.001);
  const std::vector<Vec3> below{Vec3(0, 0, -10), Vec3(1, 0, -10), Vec3(0, 1, 20)};
  const auto fit = ransac_plane_fit(pts, {}, below);
  EXPECT_LT(fit.plane.normal.z(), 0.0);
}

TEST(RansacPlane, RefinementIsLeastSquaresOverInliers) {
  std::mt19937_64 rng(4);
  const auto pts = noisy_plane(rng, 500, 100, 0.02);
  PlaneFitParams params;
  params.threshold = 0.06;
  const auto fit = ransac_plane_fit(pts, params);
  const auto& idx = fit.report.inliers;
  const double best = sum_sq(pts, idx, fit.plane.normal, fit.plane.offset);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    const Vec3 axis = Vec3(n(rng), n(rng), n(rng)).normalized();
    const Vec3 normal = (rotation_exp(axis * 1e-3) * fit.plane.normal).normalized();
    const double offset = fit.plane.offset + 1e-3 * n(rng);
    EXPECT_GE(sum_sq(pts, idx, normal, offset), best);
  }
  double rms = std::sqrt(best / static_cast<double>(idx.size()));
  EXPECT_NEAR(fit.report.rms_residual, rms, 1e-12);
}

TEST(RansacPlane, RigidEquivariance) {
  std::mt19937_64 rng(5);
  const auto pts = noisy_plane(rng, 300, 100, 0.01);
  PlaneFitParams params;
  params.threshold = 0.03;
  const std::vector<Vec3> views{Vec3(0, 0, 10)};
  const auto fit = ransac_plane_fit(pts, params, views);
  const Mat3 r = rotation_exp(Vec3(0.4, -0.2, 0.9));
  const Vec3 t(3.0, -1.0, 7.0);
  std::vector<Vec3> moved;
  for (const auto& p : pts) moved.push_back(r * p + t);
  const std::vector<Vec3> moved_views{r * views[0] + t};
  const auto fit2 = ransac_plane_fit(moved, params, moved_views);
  EXPECT_EQ(fit2.report.inliers, fit.report.inliers);
  EXPECT_LT((fit2.plane.normal - r * fit.plane.normal).norm(), 1e-9);
  EXPECT_NEAR(fit2.plane.offset, fit.plane.offset + (r * fit.plane.normal).dot(t), 1e-9);
}

TEST(RansacPlane, DeterministicForSeed) {
  std::mt19937_64 rng(6);
  const auto pts = noisy_plane(rng, 300, 200, 0.01);
  PlaneFitParams params;
  params.threshold = 0.03;
  params.seed = 42;
  const auto a = ransac_plane_fit(pts, params);
  const auto b = ransac_plane_fit(pts, params);
  EXPECT_EQ(a.report.inliers, b.report.inliers);
  EXPECT_EQ(a.plane.normal, b.plane.normal);
  EXPECT_EQ(a.plane.offset, b.plane.offset);
}

TEST(RansacPlane, DefaultMinInliers) {
  EXPECT_EQ(default_min_inliers(10), 20);
  EXPECT_EQ(default_min_inliers(1000), 300);
}

TEST(AhrsPlane, LevelGravity) {
  const std::vector<Vec3> pts{Vec3(0, 0, -2), Vec3(1, 0, -2.2), Vec3(0, 1, -1.8)};
  const auto plane = horizontal_plane_from_ahrs(pts, Vec3(0, 0, -1));
  EXPECT_LT((plane.normal - Vec3(0, 0, 1)).norm(), 1e-12);
  EXPECT_NEAR(plane.offset, -2.0, 1e-12);
}

TEST(AhrsPlane, TenDegreeTilt) {
  const double a = 10.0 * kDeg;
  const Vec3 g(std::sin(a), 0.0, -std::cos(a));
  const std::vector<Vec3> pts{Vec3(1, 2, 3), Vec3(-1, 0, 3)};
  const auto plane = horizontal_plane_from_ahrs(pts, g);
  EXPECT_LT((plane.normal + g).norm(), 1e-12);
  EXPECT_NEAR(normal_angle(plane.normal, Vec3::UnitZ()), a, 1e-12);
  EXPECT_NEAR(plane.signed_distance(Vec3(0, 1, 3)), 0.0, 1e-12);
}

TEST(AhrsPlane, GravityFromLevelCamera) {
  // Nadir camera with zero roll/pitch: gravity along the camera's optical axis.
  AhrsSample s;
  s.roll = 180.0;
  const Mat3 r = ahrs_rotation(s);
  const Pose pose(r, Vec3(0, 0, 2));
  EXPECT_LT((gravity_in_world(pose, s) - Vec3(0, 0, -1)).norm(), 1e-12);
}

TEST(AhrsPlane, RejectsNonUnitGravity) {
  const std::vector<Vec3> pts{Vec3(0, 0, 0)};
  EXPECT_THROW(horizontal_plane_from_ahrs(pts, Vec3(0, 0, -2)), Error);
  EXPECT_THROW(horizontal_plane_from_ahrs({}, Vec3(0, 0, -1)), Error);
}

TEST(Planarity, Examples) {
  PlaneFitReport r;
  r.total_count = 100;
  r.inlier_count = 80;
  r.rms_residual = 0.05;
  EXPECT_EQ(planarity_check(r, 2.0, {}), Planarity::Accept);
  r.rms_residual = 0.2;
  EXPECT_EQ(planarity_check(r, 2.0, {}), Planarity::SkipProjection);
  r.rms_residual = 0.01;
  r.inlier_count = 40;
  EXPECT_EQ(planarity_check(r, 2.0, {}), Planarity::SkipProjection);
  r.inlier_count = 50;
  EXPECT_EQ(planarity_check(r, 2.0, {}), Planarity::Accept);
}

TEST(NormalAngle, IgnoresSign) {
  EXPECT_NEAR(normal_angle(Vec3(0, 0, 1), Vec3(0, 0, -1)), 0.0, 1e-15);
  EXPECT_NEAR(normal_angle(Vec3(0, 0, 1), Vec3(1, 0, 0)), 90 * kDeg, 1e-15);
}
