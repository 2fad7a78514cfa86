#pragma once

#include <optional>
#include <vector>

#include "seqmosaic/camera_geometry.hpp"

namespace seqmosaic {

/// One image measurement on the ideal (undistorted) pinhole raster.
struct BaObservation {
  int pose = 0;
  int point = 0;
  PixelCoord pixel;
};

struct BaProblem {
  std::vector<Pose> poses;
  std::vector<bool> pose_fixed;
  std::vector<Vec3> points;
  std::vector<BaObservation> observations;
  /// Optional gauge constraint: (pose index, axis) of a center coordinate held constant.
  std::optional<std::pair<int, int>> fixed_center_axis;
};

struct BaOptions {
  int max_iterations = 50;
  double initial_lambda = 1e-3;
  double min_relative_decrease = 1e-8;
  double min_step = 1e-10;
  int max_consecutive_rejections = 10;
};

enum class BaTermination { AlreadyOptimal, SmallDecrease, SmallStep, MaxIterations, NoFreeParameters };

struct BaReport {
  int iterations = 0;
  int accepted_steps = 0;
  double initial_cost = 0.0;  // sum of squared pixel residuals
  double final_cost = 0.0;
  double initial_rms = 0.0;   // per observation, pixels
  double final_rms = 0.0;
  BaTermination termination = BaTermination::MaxIterations;
};

double reprojection_cost(const BaProblem& problem, const CameraModel& camera);

/// Levenberg-Marquardt over all non-fixed poses and all points, solving the
/// damped normal equations through the pose Schur complement. Damping is
/// lambda * diag(H), starting at initial_lambda, divided by ten on accepted
/// steps and multiplied by ten on rejected ones. Accepted steps never
/// increase the cost. Fixed poses are never written.
///
/// Throws DivergedAdjustment after max_consecutive_rejections rejected steps
/// that each increased the cost.
BaReport bundle_adjust(BaProblem& problem, const CameraModel& camera, const BaOptions& options = {});

}  // namespace seqmosaic
