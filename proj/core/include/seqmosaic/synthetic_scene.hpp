#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "seqmosaic/camera_geometry.hpp"
#include "seqmosaic/image.hpp"
#include "seqmosaic/plane_fitting.hpp"
#include "seqmosaic/trajectory_io.hpp"

namespace seqmosaic {

class KeyValueFile;

enum class TerrainKind { Flat, TwoLevel, Inclined };

/// World frame is z up; the seabed passes through z = 0 at x = 0.
struct SceneSpec {
  TerrainKind terrain = TerrainKind::Flat;
  double step_height = 0.0;    // TwoLevel: the floor drops by this much for x >= step_position
  double step_position = 0.0;
  double incline_deg = 0.0;    // Inclined: slope rising along +x
  std::uint64_t texture_seed = 7;
  double blob_density = 1.0;   // multiplier on the default blob count
  double extent_x = 30.0;      // meters along track
  double extent_y = 1.2;       // meters across track
  double marker_spacing = 1.0; // meters between markers along track, 0 disables them
  double marker_radius = 0.03;
};

enum class TrajectoryPattern { SingleStrip, Lawnmower };

struct TrajectorySpec {
  TrajectoryPattern pattern = TrajectoryPattern::SingleStrip;
  double altitude = 2.0;
  double speed = 0.125;
  double frame_rate = 0.5;
  double overlap = 0.6;               // across-track overlap between lawnmower lines
  double attitude_jitter_deg = 1.0;   // standard deviation per axis
  double altitude_jitter = 0.02;      // meters, standard deviation
};

struct Marker {
  int id = 0;
  Vec3 position;
};

class Terrain {
 public:
  explicit Terrain(const SceneSpec& spec);

  /// First intersection in front of the ray origin.
  std::optional<Vec3> intersect(const Ray& ray) const;
  /// Height of the surface below (x, y).
  double height(double x, double y) const;
  /// Gray level of the surface texture at a surface point.
  double gray(const Vec3& surface_point) const;
  Rgb color(const Vec3& surface_point) const;
  /// Ground-truth planes: one for Flat and Inclined, upper then lower level for TwoLevel.
  std::vector<Plane> planes() const;
  const std::vector<Marker>& markers() const noexcept { return markers_; }
  const SceneSpec& spec() const noexcept { return spec_; }

 private:
  double blobs(double s, double t) const;

  SceneSpec spec_;
  std::vector<Marker> markers_;
};

/// Renders frames of a terrain; the per-pixel camera rays are computed once.
class Renderer {
 public:
  Renderer(const Terrain& terrain, const CameraModel& camera);
  Image render(const Pose& pose) const;

 private:
  const Terrain& terrain_;
  CameraModel camera_;
  std::vector<Vec3> rays_;  // camera frame, unit length, row-major
};

/// Poses along the trajectory with timestamps; ids start at 0.
std::vector<TrajectoryEntry> make_trajectory(const SceneSpec& scene, const TrajectorySpec& trajectory,
                                             const CameraModel& camera, std::uint64_t seed);

/// Camera-to-world rotation of a nadir camera with image x along `heading` (radians from +x).
Mat3 nadir_rotation(double heading);

struct SyntheticDataset {
  CameraModel camera;
  std::vector<Image> images;
  std::vector<TrajectoryEntry> trajectory;
  std::vector<AhrsSample> ahrs;
  std::vector<Plane> planes;
  std::vector<Marker> markers;
};

/// Throws InvalidSpec for inconsistent specs.
SyntheticDataset render_sequence(const SceneSpec& scene, const TrajectorySpec& trajectory, const CameraModel& camera,
                                 std::uint64_t seed);

/// images/frame_NNNNNN.png, camera.txt, trajectory.txt, ahrs.txt, markers.txt, manifest.txt.
void write_dataset(const SyntheticDataset& dataset, const std::filesystem::path& directory);

struct SynthSpec {
  SceneSpec scene;
  TrajectorySpec trajectory;
  CameraModel camera;
  std::uint64_t seed = 1;
};

/// Reads a scene description (key = value); camera keys may be inline or
/// referenced with `camera = <path>` relative to the spec file.
SynthSpec synth_spec_from_key_values(const KeyValueFile& file, const std::filesystem::path& base_dir = {});
SynthSpec load_synth_spec(const std::filesystem::path& path);

/// A 968 x 728 camera with a 2 m nadir view spanning a 1.2 m wide corridor.
CameraModel comex_like_camera();

struct SimilarityReport {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  std::vector<double> residuals;  // per point, meters
  double rms = 0.0;               // sqrt(mean |r|^2)
  double rms_per_axis = 0.0;      // sqrt(mean over coordinates of r_i^2)
};

/// Closed-form similarity mapping `points` onto `reference` (least squares).
/// Throws DegenerateConfiguration for fewer than 3 or collinear points.
SimilarityReport compare_to_reference(std::span<const Vec3> points, std::span<const Vec3> reference);

}  // namespace seqmosaic
