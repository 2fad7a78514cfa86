#include <algorithm>

#include <gtest/gtest.h>

#include "seqmosaic/error.hpp"
#include "seqmosaic/features.hpp"
#include "seqmosaic/synthetic_scene.hpp"
#include "test_support.hpp"

using namespace seqmosaic;

namespace {

CameraModel pinhole_camera() {
  CameraModel cam = testkit::small_camera(2);
  cam.distortion = {};
  return cam;
}

Image render_at(const CameraModel& cam, double x) {
  static const Terrain terrain{SceneSpec{}};
  return Renderer(terrain, cam).render(Pose(nadir_rotation(0.0), Vec3(x, 0.0, 2.0)));
}

double median(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST(DetectAndMatch, IdenticalImagesMatchInPlace) {
  const auto cam = pinhole_camera();
  const Image img = render_at(cam, 3.0);
  const auto matches = detect_and_match(img, img, FeatureConfig{});
  ASSERT_GE(matches.size(), 100u);
  for (const auto& m : matches) {
    EXPECT_NEAR(m.pixel_a.u, m.pixel_b.u, 1e-6);
    EXPECT_NEAR(m.pixel_a.v, m.pixel_b.v, 1e-6);
    EXPECT_GE(m.score, 0.0);
    EXPECT_LE(m.score, 1.0);
  }
  EXPECT_TRUE(std::is_sorted(matches.begin(), matches.end(),
                             [](const FeatureMatch& a, const FeatureMatch& b) { return a.score > b.score; }));
}

TEST(DetectAndMatch, TenPixelTranslationFlow) {
  const auto cam = pinhole_camera();
  // Camera-parallel motion of 10 px at the 2 m seabed depth.
  const double step = 10.0 * 2.0 / cam.fx;
  const auto matches = detect_and_match(render_at(cam, 3.0), render_at(cam, 3.0 + step), FeatureConfig{});
  ASSERT_GE(matches.size(), 30u);
  std::vector<double> du, dv;
  for (const auto& m : matches) {
    du.push_back(m.pixel_b.u - m.pixel_a.u);
    dv.push_back(m.pixel_b.v - m.pixel_a.v);
  }
  // Nadir camera: image u follows world x, so the scene moves by -10 px.
  EXPECT_NEAR(median(du), -10.0, 0.5);
  EXPECT_NEAR(median(dv), 0.0, 0.5);
}

TEST(DetectAndMatch, UniformImagesHaveTooFewMatches) {
  const Image flat(200, 150, {90, 90, 90});
  try {
    detect_and_match(flat, flat, FeatureConfig{});
    FAIL() << "expected TooFewMatches";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TooFewMatches);
  }
}

TEST(DetectCorners, RespectsCountAndSpacing) {
  const auto cam = pinhole_camera();
  FeatureConfig cfg;
  cfg.max_features = 120;
  const auto corners = detect_corners(to_gray(render_at(cam, 1.0)), cfg);
  ASSERT_LE(corners.size(), 120u);
  ASSERT_GT(corners.size(), 50u);
  for (std::size_t i = 0; i < corners.size(); ++i) {
    for (std::size_t j = i + 1; j < corners.size(); ++j) {
      EXPECT_GE(std::hypot(corners[i].pixel.u - corners[j].pixel.u, corners[i].pixel.v - corners[j].pixel.v),
                cfg.min_distance - 1e-9);
    }
  }
}
