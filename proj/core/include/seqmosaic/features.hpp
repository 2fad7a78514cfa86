#pragma once

#include <span>
#include <vector>

#include "seqmosaic/camera_geometry.hpp"
#include "seqmosaic/image.hpp"

namespace seqmosaic {

struct FeatureConfig {
  int max_features = 800;
  int patch_size = 11;          // odd, NCC support
  int min_matches = 30;
  double min_distance = 8.0;    // px between accepted corners
  double quality_level = 0.01;  // fraction of the strongest corner response
  double min_ncc = 0.8;
  double search_radius = 0.3;   // fraction of max(width, height) without a motion prior
  double tracking_radius = 40.0;  // px around the predicted position with a motion prior
  int refine_iterations = 20;
  double max_refine_shift = 1.5;  // px the subpixel refinement may move a match
};

struct Keypoint {
  PixelCoord pixel;
  double response = 0.0;
};

struct FeatureMatch {
  PixelCoord pixel_a;
  PixelCoord pixel_b;
  double score = 0.0;  // NCC clipped to [0, 1]
  int index_a = -1;
  int index_b = -1;
};

/// Minimum-eigenvalue corner response, 3x3 non-maximum suppression and a
/// greedy minimum-distance filter, strongest first.
std::vector<Keypoint> detect_corners(const GrayImage& image, const FeatureConfig& config);

/// Matches positions in `a` (possibly subpixel) against corners of `b`.
///
/// Candidates are corners of `b` within the search radius around
/// `pixel_a + predicted_offset`; a pair survives when it is the mutual best
/// NCC match and scores at least `min_ncc`. The location in `b` is then
/// refined to subpixel accuracy by Lucas-Kanade alignment of the `a` patch,
/// translational first and then affine. Output is sorted by score, highest
/// first.
std::vector<FeatureMatch> match_features(const GrayImage& a, std::span<const PixelCoord> points_a,
                                         const GrayImage& b, std::span<const Keypoint> corners_b,
                                         const FeatureConfig& config, const Vec2& predicted_offset,
                                         double radius);

/// Detects corners in both images and matches them without a motion prior.
/// Throws TooFewMatches when fewer than config.min_matches survive.
std::vector<FeatureMatch> detect_and_match(const Image& a, const Image& b, const FeatureConfig& config);

}  // namespace seqmosaic
