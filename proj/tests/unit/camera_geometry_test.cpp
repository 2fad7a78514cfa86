#include <random>

#include <gtest/gtest.h>

#include "seqmosaic/camera_geometry.hpp"
#include "seqmosaic/error.hpp"
#include "seqmosaic/key_value.hpp"

using namespace seqmosaic;

namespace {

CameraModel simple_camera() {
  CameraModel c;
  c.fx = c.fy = 1000.0;
  c.cx = 500.0;
  c.cy = 400.0;
  c.width = 1000;
  c.height = 800;
  return c;
}

CameraModel distorted_camera() {
  CameraModel c = simple_camera();
  c.distortion = {-0.12, 0.04, -0.005, 0.0008, -0.0005};
  return c;
}

Pose random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return Pose(rotation_exp(Vec3(u(rng), u(rng), u(rng))), Vec3(5 * u(rng), 5 * u(rng), 5 * u(rng)));
}

}  // namespace

TEST(Project, PrincipalPointAndPinholeFormula) {
  const auto cam = simple_camera();
  const PixelCoord c = project({0, 0, 2}, Pose(), cam, true);
  EXPECT_DOUBLE_EQ(c.u, 500.0);
  EXPECT_DOUBLE_EQ(c.v, 400.0);
  // u = cx + fx * x / z = 500 + 1000 * 0.2 / 2
  const PixelCoord p = project({0.2, 0, 2}, Pose(), cam, false);
  EXPECT_NEAR(p.u, 600.0, 1e-12);
  EXPECT_NEAR(p.v, 400.0, 1e-12);
}

TEST(Project, BehindCameraThrows) {
  try {
    project({0, 0, -1}, Pose(), simple_camera(), false);
    FAIL() << "expected BehindCamera";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BehindCamera);
  }
}

TEST(Project, EquivariantUnderWorldMotion) {
  std::mt19937_64 rng(3);
  const auto cam = distorted_camera();
  for (int i = 0; i < 20; ++i) {
    const Pose pose(Mat3::Identity(), Vec3(0.1, -0.2, -3));
    const Vec3 x(0.3, 0.1, 0.5);
    const Mat3 r = rotation_exp(Vec3(0.3, -0.2, 0.9) * (i + 1) / 20.0);
    const Vec3 t(1.0, 2.0, -0.5 * i);
    const auto a = project(x, pose, cam, true);
    const auto b = project(r * x + t, pose.transformed(r, t), cam, true);
    EXPECT_NEAR(a.u, b.u, 1e-9);
    EXPECT_NEAR(a.v, b.v, 1e-9);
  }
}

TEST(Unproject, OpticalAxisAndInversePinhole) {
  const auto cam = simple_camera();
  const Ray axis = unproject({500, 400}, Pose(), cam);
  EXPECT_NEAR((axis.direction - Vec3::UnitZ()).norm(), 0.0, 1e-15);
  const Ray r = unproject({1500, 400}, Pose(), cam);
  EXPECT_NEAR((r.direction - Vec3(1, 0, 1).normalized()).norm(), 0.0, 1e-15);
  EXPECT_NEAR(r.direction.norm(), 1.0, 1e-12);
}

TEST(Unproject, RayContainsProjectedPoint) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> z(0.5, 10.0), xy(-0.4, 0.4);
  const auto cam = simple_camera();
  for (int i = 0; i < 100; ++i) {
    const Pose pose = random_pose(rng);
    const double depth = z(rng);
    const Vec3 p = pose.to_world(Vec3(xy(rng) * depth, xy(rng) * depth, depth));
    const Ray ray = unproject(project(p, pose, cam, false), pose, cam);
    const Vec3 d = p - ray.origin;
    EXPECT_LT((d - d.dot(ray.direction) * ray.direction).norm(), 1e-9);
    EXPECT_EQ(ray.origin, pose.center());
  }
}

TEST(Unproject, RoundTripOverWideDepthRange) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> logz(std::log(0.1), std::log(100.0)), xy(-0.35, 0.35);
  for (const bool distorted : {false, true}) {
    const auto cam = distorted ? distorted_camera() : simple_camera();
    double worst = 0.0;
    for (int i = 0; i < 500; ++i) {
      const Pose pose = random_pose(rng);
      const double depth = std::exp(logz(rng));
      const Vec3 p = pose.to_world(Vec3(xy(rng) * depth, xy(rng) * depth, depth));
      const PixelCoord px = project(p, pose, cam, distorted);
      const Ray ray = unproject(px, pose, cam);
      const PixelCoord back = project(ray.at(depth), pose, cam, distorted);
      worst = std::max(worst, std::hypot(back.u - px.u, back.v - px.v));
    }
    EXPECT_LT(worst, distorted ? 1e-3 : 1e-9) << "distorted=" << distorted;
  }
}

TEST(Undistort, IdentityWithoutDistortion) {
  const auto cam = simple_camera();
  const PixelCoord p{123.25, 654.5};
  EXPECT_EQ(undistort_pixel(p, cam), p);
}

TEST(Undistort, PrincipalPointIsFixed) {
  auto cam = simple_camera();
  cam.distortion.k1 = -0.2;
  cam.distortion.k2 = 0.05;
  const auto p = undistort_pixel({cam.cx, cam.cy}, cam);
  EXPECT_NEAR(p.u, cam.cx, 1e-12);
  EXPECT_NEAR(p.v, cam.cy, 1e-12);
}

TEST(Undistort, InvertsForwardModel) {
  std::mt19937_64 rng(5);
  const auto cam = distorted_camera();
  std::uniform_real_distribution<double> u(0, cam.width - 1), v(0, cam.height - 1);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const PixelCoord ideal{u(rng), v(rng)};
    const PixelCoord back = undistort_pixel(distort_pixel(ideal, cam), cam);
    worst = std::max(worst, std::hypot(back.u - ideal.u, back.v - ideal.v));
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(Undistort, PathologicalCoefficientsDoNotConverge) {
  auto cam = simple_camera();
  cam.distortion.k1 = 40.0;
  try {
    undistort_pixel({990, 790}, cam);
    FAIL() << "expected NoConvergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NoConvergence);
  }
}

TEST(SampleBilinear, ExamplesFromTheContract) {
  Image img(3, 2);
  img.set(0, 0, {10, 10, 10});
  img.set(1, 0, {20, 20, 20});
  img.set(0, 1, {10, 10, 10});
  img.set(1, 1, {20, 20, 20});
  img.set(2, 1, {7, 8, 9});
  auto exact = sample_bilinear(img, {2, 1});
  ASSERT_TRUE(exact);
  EXPECT_EQ(*exact, Vec3(7, 8, 9));
  auto mid = sample_bilinear(img, {0.5, 0.5});
  ASSERT_TRUE(mid);
  EXPECT_DOUBLE_EQ(mid->x(), 15.0);
  EXPECT_FALSE(sample_bilinear(img, {-0.6, 0}));
}

TEST(PoseInvariants, RejectsNonOrthonormalRotation) {
  Mat3 m = Mat3::Identity();
  m(0, 0) = 1.001;
  EXPECT_THROW(Pose(m, Vec3::Zero()), Error);
  EXPECT_THROW(Pose(-Mat3::Identity(), Vec3::Zero()), Error);
  EXPECT_NO_THROW(Pose(rotation_exp(Vec3(0.1, 0.2, 0.3)), Vec3::Zero()));
}

TEST(CameraModel, ValidationAndIngest) {
  auto cam = simple_camera();
  cam.cx = 1000.0;
  EXPECT_THROW(cam.validate(), Error);
  const auto kv = KeyValueFile::parse("fx = 800\nfy = 810\ncx = 320\ncy = 240\nwidth = 640\nheight = 480\nk1 = -0.1\n");
  const auto loaded = camera_from_key_values(kv);
  EXPECT_EQ(loaded.fy, 810.0);
  EXPECT_EQ(loaded.distortion.k1, -0.1);
  EXPECT_EQ(loaded.distortion.p2, 0.0);
  const auto again = camera_from_key_values(KeyValueFile::parse(camera_to_text(loaded)));
  EXPECT_EQ(again, loaded);
}

TEST(CameraModel, DownscaledKeepsPixelCenterConvention) {
  const auto cam = simple_camera();
  const auto half = cam.downscaled(2);
  EXPECT_EQ(half.width, 500);
  EXPECT_EQ(half.height, 400);
  // Full-res pixel centers 0 and 1 average into half-res center 0.
  const Vec3 p(0.1, -0.05, 2.0);
  const auto full = project(p, Pose(), cam, false);
  const auto small = project(p, Pose(), half, false);
  EXPECT_NEAR(small.u, (full.u - 0.5) / 2.0, 1e-9);
  EXPECT_NEAR(small.v, (full.v - 0.5) / 2.0, 1e-9);
}
