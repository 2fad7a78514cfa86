#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "seqmosaic/bundle_adjustment.hpp"
#include "seqmosaic/camera_geometry.hpp"
#include "seqmosaic/error.hpp"
#include "seqmosaic/features.hpp"
#include "seqmosaic/image.hpp"
#include "seqmosaic/multiview.hpp"
#include "seqmosaic/trajectory_io.hpp"

namespace seqmosaic {

enum class FrameStatus { Pending, Tracked, Lost };

struct Frame {
  int id = 0;
  double timestamp = 0.0;
  Image image;
  std::optional<Pose> pose;
  FrameStatus status = FrameStatus::Pending;
};

struct Observation {
  int frame_id = 0;
  PixelCoord pixel;  // as observed, lens distortion included
  PixelCoord ideal;  // undistorted
};

struct TiePoint {
  int id = 0;
  Vec3 position = Vec3::Zero();
  std::vector<Observation> observations;
  Rgb color;
};

/// Posed frames and the tie points they observe.
struct SparseMap {
  std::map<int, Pose> poses;
  std::map<int, TiePoint> points;
};

struct SlidingWindow {
  int size = 5;
  std::vector<int> members;  // oldest first
  std::vector<int> fixed;    // posed frames outside the window

  bool full() const noexcept { return static_cast<int>(members.size()) == size; }
};

/// Middle member, index floor(n / 2).
int select_keyframe(const SlidingWindow& window);

std::vector<FeatureMatch> detect_and_match(const Frame& a, const Frame& b, const FeatureConfig& config);

/// Adjusts the poses of the window members and every tie point they
/// observe. Observations from frames outside the window enter as constraints
/// with their poses held fixed. `gauge` optionally pins one center coordinate
/// (frame id, axis).
BaReport windowed_bundle_adjust(const SlidingWindow& window, SparseMap& map, const CameraModel& camera,
                                const BaOptions& options = {},
                                std::optional<std::pair<int, int>> gauge = std::nullopt);

/// Drops observations of the given points whose reprojection error exceeds
/// `cutoff` pixels and then any point left with fewer than two observations.
/// Returns the number of observations removed.
int prune_outliers(SparseMap& map, std::span<const int> point_ids, const CameraModel& camera, double cutoff);

/// Poses read from a trajectory file.
class ReplayPoses {
 public:
  explicit ReplayPoses(std::vector<TrajectoryEntry> entries);
  static ReplayPoses load(const std::filesystem::path& path);

  /// Throws MissingPose when the id is absent.
  const Pose& pose(int frame_id) const;
  bool contains(int frame_id) const { return by_id_.count(frame_id) != 0; }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<TrajectoryEntry>& entries() const noexcept { return entries_; }

 private:
  std::vector<TrajectoryEntry> entries_;
  std::map<int, std::size_t> by_id_;
};

struct PoseEngineConfig {
  int window_size = 5;
  int mosaic_stride = 1;
  FeatureConfig features;
  RansacParams essential{1.0, 0.999, 1000, 1};
  RansacParams resection{2.0, 0.999, 1000, 1};
  int min_resection_inliers = 20;
  double min_parallax_deg = 1.0;          // initialization: median parallax of the tie points
  double min_triangulation_deg = 2.0;     // per new tie point
  double outlier_cutoff = 2.0;            // pixels
  BaOptions bundle_adjustment;
};

/// A frame handed to the mosaicking stages, with the local map around it.
struct Keyframe {
  int frame_id = 0;
  double timestamp = 0.0;
  Image image;
  Pose pose;
  std::vector<Vec3> local_points;    // tie points seen by the current window
  std::vector<Vec3> window_centers;  // camera centers of the current window
  int session = 0;                   // increments on every restart
};

enum class EngineState { AwaitingInitialization, Tracking, Lost };

struct EngineStep {
  int frame_id = 0;
  FrameStatus status = FrameStatus::Pending;
  std::optional<Pose> pose;
  std::vector<Keyframe> keyframes;
  std::optional<Error> failure;  // InitializationFailed, TrackingLost or DivergedAdjustment
  std::optional<BaReport> adjustment;
};

/// Sequential VO state machine. With replay poses it skips estimation and
/// only builds the sparse map under the given poses.
class PoseEngine {
 public:
  PoseEngine(const CameraModel& camera, const PoseEngineConfig& config,
             std::shared_ptr<const ReplayPoses> replay = nullptr);
  ~PoseEngine();
  PoseEngine(PoseEngine&&) noexcept;
  PoseEngine& operator=(PoseEngine&&) noexcept;

  /// Frame ids must increase. Failures are reported in the step, not thrown.
  EngineStep process(const Frame& frame);
  /// Hands over the window members that never became central.
  std::vector<Keyframe> finish();
  /// Back to awaiting initialization; the map and window are discarded.
  void restart();

  EngineState state() const noexcept;
  const SlidingWindow& window() const noexcept;
  const SparseMap& map() const noexcept;
  std::optional<Pose> pose(int frame_id) const;
  FrameStatus status(int frame_id) const;
  int session() const noexcept;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct InitializedBlock {
  std::vector<Pose> poses;
  std::vector<TiePoint> tie_points;
};

/// Runs the engine's initialization over the first frames.
/// Throws InitializationFailed.
InitializedBlock initialize_block(std::span<const Frame> frames, const CameraModel& camera,
                                  const PoseEngineConfig& config);

}  // namespace seqmosaic
