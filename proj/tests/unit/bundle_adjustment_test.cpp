#include <random>

#include <gtest/gtest.h>

#include "seqmosaic/bundle_adjustment.hpp"
#include "seqmosaic/multiview.hpp"

using namespace seqmosaic;

namespace {

CameraModel camera() {
  CameraModel c;
  c.fx = 700.0;
  c.fy = 690.0;
  c.cx = 320.0;
  c.cy = 240.0;
  c.width = 640;
  c.height = 480;
  return c;
}

// Five cameras looking down the +z axis at a cloud 4-6 m away.
BaProblem exact_problem(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> xy(-1.5, 1.5), z(4.0, 6.0), small(-0.05, 0.05);
  BaProblem p;
  for (int i = 0; i < 5; ++i) {
    p.poses.emplace_back(rotation_exp(Vec3(small(rng), small(rng), small(rng))), Vec3(0.3 * i, small(rng), 0.0));
    p.pose_fixed.push_back(false);
  }
  const auto cam = camera();
  while (p.points.size() < 120) {
    const Vec3 x(xy(rng) + 0.6, xy(rng), z(rng));
    std::vector<BaObservation> obs;
    for (int i = 0; i < 5; ++i) {
      const auto px = project(x, p.poses[i], cam, false);
      if (px.u < 0 || px.u > 639 || px.v < 0 || px.v > 479) continue;
      obs.push_back({i, static_cast<int>(p.points.size()), px});
    }
    if (obs.size() < 2) continue;
    p.points.push_back(x);
    p.observations.insert(p.observations.end(), obs.begin(), obs.end());
  }
  return p;
}

}  // namespace

TEST(ProjectionJacobian, MatchesCentralDifferences) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 0.3);
  const auto cam = camera();
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    const Pose pose(rotation_exp(Vec3(n(rng), n(rng), n(rng))), Vec3(n(rng), n(rng), n(rng)));
    const Vec3 point = pose.to_world(Vec3(n(rng), n(rng), 5.0 + n(rng)));
    const auto j = projection_jacobian(pose, point, cam);
    const auto p0 = project(point, pose, cam, false);
    EXPECT_NEAR(j.pixel.x(), p0.u, 1e-9);
    EXPECT_NEAR(j.pixel.y(), p0.v, 1e-9);

    Eigen::Matrix<double, 2, 6> fd_pose;
    for (int k = 0; k < 6; ++k) {
      Vec6 d = Vec6::Zero();
      d[k] = h;
      const auto a = project(point, pose.retract(d), cam, false);
      const auto b = project(point, pose.retract(-d), cam, false);
      fd_pose.col(k) = Vec2(a.u - b.u, a.v - b.v) / (2 * h);
    }
    Eigen::Matrix<double, 2, 3> fd_point;
    for (int k = 0; k < 3; ++k) {
      const Vec3 d = Vec3::Unit(k) * h;
      const auto a = project(point + d, pose, cam, false);
      const auto b = project(point - d, pose, cam, false);
      fd_point.col(k) = Vec2(a.u - b.u, a.v - b.v) / (2 * h);
    }
    EXPECT_LT((j.d_pose - fd_pose).norm() / fd_pose.norm(), 1e-4) << "trial " << trial;
    EXPECT_LT((j.d_point - fd_point).norm() / fd_point.norm(), 1e-4) << "trial " << trial;
  }
}

TEST(BundleAdjust, ExactProblemIsAlreadyOptimal) {
  auto p = exact_problem(1);
  p.pose_fixed[0] = true;
  p.fixed_center_axis = {{1, 0}};
  const auto before = p.poses;
  const auto report = bundle_adjust(p, camera());
  EXPECT_EQ(report.termination, BaTermination::AlreadyOptimal);
  EXPECT_LT(report.final_rms, 1e-9);
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_LT((p.poses[i].center() - before[i].center()).norm(), 1e-9);
  }
}

TEST(BundleAdjust, RecoversFromPerturbation) {
  auto p = exact_problem(2);
  p.pose_fixed[0] = true;
  p.fixed_center_axis = {{1, 0}};
  const auto truth = p.poses;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  const double deg = 3.14159265358979 / 180.0;
  for (int i = 1; i < 5; ++i) {
    Vec6 d;
    d << Vec3(n(rng), n(rng), n(rng)).normalized() * deg, Vec3(n(rng), n(rng), n(rng)).normalized() * 0.01 * 0.3 * i;
    if (i == 1) d[3] = 0.0;  // the gauge coordinate stays put
    p.poses[i] = p.poses[i].retract(d);
  }
  for (auto& x : p.points) x *= 1.0 + 0.01 * n(rng);
  const auto report = bundle_adjust(p, camera());
  EXPECT_GT(report.initial_rms, 1.0);
  EXPECT_LE(report.final_rms, 0.1);
  EXPECT_LE(report.final_cost, report.initial_cost);
  for (int i = 1; i < 5; ++i) EXPECT_LT((p.poses[i].center() - truth[i].center()).norm(), 1e-4);
}

TEST(BundleAdjust, FixedPosesAreBitIdentical) {
  auto p = exact_problem(4);
  p.pose_fixed = {true, true, false, false, false};
  for (int i = 2; i < 5; ++i) {
    Vec6 d;
    d << 0.01, -0.01, 0.005, 0.02, 0.01, -0.01;
    p.poses[i] = p.poses[i].retract(d);
  }
  const Pose p0 = p.poses[0], p1 = p.poses[1];
  bundle_adjust(p, camera());
  EXPECT_TRUE(p.poses[0] == p0);
  EXPECT_TRUE(p.poses[1] == p1);
}

TEST(BundleAdjust, AcceptedStepsNeverIncreaseCost) {
  auto p = exact_problem(5);
  p.pose_fixed[0] = true;
  p.fixed_center_axis = {{1, 0}};
  for (auto& x : p.points) x += Vec3(0.02, -0.01, 0.03);
  double previous = reprojection_cost(p, camera());
  for (int it = 0; it < 8; ++it) {
    BaOptions one;
    one.max_iterations = 1;
    bundle_adjust(p, camera(), one);
    const double c = reprojection_cost(p, camera());
    EXPECT_LE(c, previous);
    previous = c;
  }
}

TEST(BundleAdjust, AllFixedHasNoFreeParametersWhenNoPoints) {
  BaProblem p;
  p.poses = {Pose()};
  p.pose_fixed = {true};
  EXPECT_EQ(bundle_adjust(p, camera()).termination, BaTermination::NoFreeParameters);
}
