#include "seqmosaic/synthetic_scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>

#include <Eigen/SVD>

#include "seqmosaic/error.hpp"
#include "seqmosaic/image_io.hpp"
#include "seqmosaic/key_value.hpp"

namespace seqmosaic {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg = kPi / 180.0;
constexpr int kOctaves = 3;
constexpr double kSigmaMin = 0.005;
const double kTaper = std::exp(-4.5);

std::uint64_t splitmix(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double unit(std::uint64_t& state) { return static_cast<double>(splitmix(state) >> 11) * 0x1.0p-53; }

struct Blob {
  double s;
  double t;
  double inv_two_sigma_sq;
  double cutoff_sq;
  double amplitude;
};

double cell_size(int octave) { return 4.0 * kSigmaMin * std::ldexp(2.0, octave); }

void cell_blobs(std::uint64_t seed, double density, int octave, long long i, long long j, std::vector<Blob>& out) {
  std::uint64_t state = seed ^ (0x51ED27E3ULL * static_cast<std::uint64_t>(octave + 1));
  state ^= static_cast<std::uint64_t>(i) * 0x9E3779B97F4A7C15ULL;
  splitmix(state);
  state ^= static_cast<std::uint64_t>(j) * 0xC2B2AE3D27D4EB4FULL;
  splitmix(state);
  const double c = cell_size(octave);
  const double expected = density * (octave == kOctaves - 1 ? 2.0 : 3.0);
  int count = static_cast<int>(expected);
  if (unit(state) < expected - count) ++count;
  const double amp_scale = 60.0 - 12.0 * octave;
  for (int k = 0; k < count; ++k) {
    Blob b;
    b.s = (static_cast<double>(i) + unit(state)) * c;
    b.t = (static_cast<double>(j) + unit(state)) * c;
    const double sigma = kSigmaMin * std::ldexp(1.0, octave) * (1.0 + unit(state));
    b.inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    b.cutoff_sq = 9.0 * sigma * sigma;
    const double a = amp_scale * (0.4 + 0.6 * unit(state));
    b.amplitude = (splitmix(state) & 1U) ? a : -a;
    out.push_back(b);
  }
}

// Caches the 3 x 3 cell neighbourhood per octave; consecutive lookups from
// a raster scan mostly stay in one cell.
class TextureSampler {
 public:
  TextureSampler(std::uint64_t seed, double density) : seed_(seed), density_(density) {}

  double operator()(double s, double t) {
    double sum = 128.0;
    for (int o = 0; o < kOctaves; ++o) {
      const double c = cell_size(o);
      const auto ci = static_cast<long long>(std::floor(s / c));
      const auto cj = static_cast<long long>(std::floor(t / c));
      auto& cache = cache_[o];
      if (!cache.valid || cache.i != ci || cache.j != cj) {
        cache.blobs.clear();
        for (long long dj = -1; dj <= 1; ++dj) {
          for (long long di = -1; di <= 1; ++di) cell_blobs(seed_, density_, o, ci + di, cj + dj, cache.blobs);
        }
        cache.i = ci;
        cache.j = cj;
        cache.valid = true;
      }
      for (const auto& b : cache.blobs) {
        const double ds = s - b.s;
        const double dt = t - b.t;
        const double d2 = ds * ds + dt * dt;
        if (d2 >= b.cutoff_sq) continue;
        sum += b.amplitude * (std::exp(-d2 * b.inv_two_sigma_sq) - kTaper) / (1.0 - kTaper);
      }
    }
    return sum;
  }

 private:
  struct Cache {
    bool valid = false;
    long long i = 0;
    long long j = 0;
    std::vector<Blob> blobs;
  };
  std::uint64_t seed_;
  double density_;
  Cache cache_[kOctaves];
};

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

enum class Surface { Upper, Lower, Wall, Incline };

}  // namespace

Terrain::Terrain(const SceneSpec& spec) : spec_(spec) {
  if (spec.extent_x < 0 || spec.extent_y < 0) fail(ErrorKind::InvalidSpec, "scene extent must be non-negative");
  if (spec.step_height < 0) fail(ErrorKind::InvalidSpec, "step height must be non-negative");
  if (!(spec.blob_density > 0)) fail(ErrorKind::InvalidSpec, "blob density must be positive");
  if (spec.terrain == TerrainKind::Inclined && !(std::abs(spec.incline_deg) < 80.0)) {
    fail(ErrorKind::InvalidSpec, "incline must be within +-80 degrees");
  }
  if (spec.marker_spacing > 0 && spec.marker_radius > 0) {
    int id = 0;
    for (double x = 0.5 * spec.marker_spacing; x <= spec.extent_x + 1e-9; x += spec.marker_spacing) {
      if (spec.terrain == TerrainKind::TwoLevel && std::abs(x - spec.step_position) < 3.0 * spec.marker_radius) continue;
      const double y = (id % 2 == 0 ? 0.3 : -0.3) * spec.extent_y;
      markers_.push_back({id++, Vec3(x, y, height(x, y))});
    }
  }
}

double Terrain::height(double x, double) const {
  switch (spec_.terrain) {
    case TerrainKind::Flat: return 0.0;
    case TerrainKind::TwoLevel: return x < spec_.step_position ? 0.0 : -spec_.step_height;
    case TerrainKind::Inclined: return x * std::tan(spec_.incline_deg * kDeg);
  }
  return 0.0;
}

std::vector<Plane> Terrain::planes() const {
  switch (spec_.terrain) {
    case TerrainKind::Flat: return {Plane{Vec3::UnitZ(), 0.0}};
    case TerrainKind::TwoLevel: return {Plane{Vec3::UnitZ(), 0.0}, Plane{Vec3::UnitZ(), -spec_.step_height}};
    case TerrainKind::Inclined: {
      const double a = spec_.incline_deg * kDeg;
      return {Plane{Vec3(-std::sin(a), 0.0, std::cos(a)), 0.0}};
    }
  }
  return {};
}

std::optional<Vec3> Terrain::intersect(const Ray& ray) const {
  auto hit_plane = [&](const Plane& p) -> double {
    const double denom = p.normal.dot(ray.direction);
    if (std::abs(denom) < 1e-15) return -1.0;
    return (p.offset - p.normal.dot(ray.origin)) / denom;
  };
  if (spec_.terrain != TerrainKind::TwoLevel) {
    const double t = hit_plane(planes().front());
    if (!(t > 0.0)) return std::nullopt;
    return ray.at(t);
  }
  double best = std::numeric_limits<double>::infinity();
  const double t_upper = hit_plane({Vec3::UnitZ(), 0.0});
  if (t_upper > 0.0 && ray.at(t_upper).x() < spec_.step_position) best = t_upper;
  const double t_lower = hit_plane({Vec3::UnitZ(), -spec_.step_height});
  if (t_lower > 0.0 && t_lower < best && ray.at(t_lower).x() >= spec_.step_position) best = t_lower;
  if (spec_.step_height > 0.0) {
    const double t_wall = hit_plane({Vec3::UnitX(), spec_.step_position});
    if (t_wall > 0.0 && t_wall < best) {
      const double z = ray.at(t_wall).z();
      if (z <= 0.0 && z >= -spec_.step_height) best = t_wall;
    }
  }
  if (!std::isfinite(best)) return std::nullopt;
  return ray.at(best);
}

namespace {

Surface classify(const SceneSpec& spec, const Vec3& p) {
  switch (spec.terrain) {
    case TerrainKind::Flat: return Surface::Upper;
    case TerrainKind::Inclined: return Surface::Incline;
    case TerrainKind::TwoLevel:
      if (std::abs(p.z()) < 1e-7 && p.x() <= spec.step_position + 1e-9) return Surface::Upper;
      if (std::abs(p.z() + spec.step_height) < 1e-7 && p.x() >= spec.step_position - 1e-9) return Surface::Lower;
      return Surface::Wall;
  }
  return Surface::Upper;
}

Vec2 texture_coords(const SceneSpec& spec, const Vec3& p) {
  switch (classify(spec, p)) {
    case Surface::Upper:
    case Surface::Lower: return {p.x(), p.y()};
    case Surface::Wall: return {p.y() + 500.0, p.z() + 500.0};
    case Surface::Incline: return {p.x() / std::cos(spec.incline_deg * kDeg), p.y()};
  }
  return {p.x(), p.y()};
}

double shade(const SceneSpec& spec, const std::vector<Marker>& markers, TextureSampler& sampler, const Vec3& p) {
  const Vec2 st = texture_coords(spec, p);
  double g = sampler(st.x(), st.y());
  const double r2 = spec.marker_radius;
  if (r2 > 0.0 && spec.marker_spacing > 0.0) {
    for (const auto& m : markers) {
      if (std::abs(m.position.x() - p.x()) > spec.marker_spacing) continue;
      const Vec2 mst = texture_coords(spec, m.position);
      const double rho = (st - mst).norm();
      if (rho > r2 * 1.2) continue;
      const double r1 = 0.5 * r2;
      const double w = 0.2 * r1;
      const double ring = 235.0 + (25.0 - 235.0) * smoothstep(r1 - w, r1 + w, rho);
      const double alpha = 1.0 - smoothstep(r2 - w, r2 + w, rho);
      g = alpha * ring + (1.0 - alpha) * g;
    }
  }
  return std::clamp(g, 0.0, 255.0);
}

Rgb tint(double g) { return to_rgb(Vec3(0.80 * g, 0.92 * g, g)); }

}  // namespace

double Terrain::gray(const Vec3& surface_point) const {
  TextureSampler sampler(spec_.texture_seed, spec_.blob_density);
  return shade(spec_, markers_, sampler, surface_point);
}

Rgb Terrain::color(const Vec3& surface_point) const { return tint(gray(surface_point)); }

Renderer::Renderer(const Terrain& terrain, const CameraModel& camera) : terrain_(terrain), camera_(camera) {
  camera.validate();
  rays_.resize(static_cast<std::size_t>(camera.width) * camera.height);
  for (int v = 0; v < camera.height; ++v) {
    for (int u = 0; u < camera.width; ++u) {
      Vec3& ray = rays_[static_cast<std::size_t>(v) * camera.width + u];
      try {
        const PixelCoord ideal = undistort_pixel({static_cast<double>(u), static_cast<double>(v)}, camera);
        ray = Vec3((ideal.u - camera.cx) / camera.fx, (ideal.v - camera.cy) / camera.fy, 1.0).normalized();
      } catch (const Error&) {
        ray = Vec3::Zero();
      }
    }
  }
}

Image Renderer::render(const Pose& pose) const {
  Image image(camera_.width, camera_.height);
  TextureSampler sampler(terrain_.spec().texture_seed, terrain_.spec().blob_density);
  const auto& markers = terrain_.markers();
  for (int v = 0; v < camera_.height; ++v) {
    for (int u = 0; u < camera_.width; ++u) {
      const Vec3& ray = rays_[static_cast<std::size_t>(v) * camera_.width + u];
      if (ray.isZero()) continue;
      const auto hit = terrain_.intersect({pose.center(), pose.rotation() * ray});
      if (!hit) continue;
      image.set(u, v, tint(shade(terrain_.spec(), markers, sampler, *hit)));
    }
  }
  return image;
}

Mat3 nadir_rotation(double heading) {
  return Eigen::AngleAxisd(heading, Vec3::UnitZ()).toRotationMatrix() * Vec3(1.0, -1.0, -1.0).asDiagonal();
}

std::vector<TrajectoryEntry> make_trajectory(const SceneSpec& scene, const TrajectorySpec& trajectory,
                                             const CameraModel& camera, std::uint64_t seed) {
  if (!(trajectory.altitude > 0)) fail(ErrorKind::InvalidSpec, "altitude must be positive");
  if (!(trajectory.speed > 0) || !(trajectory.frame_rate > 0)) {
    fail(ErrorKind::InvalidSpec, "speed and frame rate must be positive");
  }
  if (!(trajectory.overlap > 0 && trajectory.overlap < 1)) fail(ErrorKind::InvalidSpec, "overlap must be in (0, 1)");
  if (trajectory.attitude_jitter_deg < 0 || trajectory.altitude_jitter < 0) {
    fail(ErrorKind::InvalidSpec, "jitter must be non-negative");
  }
  const double spacing = trajectory.speed / trajectory.frame_rate;
  const int per_line = static_cast<int>(std::floor(scene.extent_x / spacing + 1e-9)) + 1;
  std::vector<double> line_y{0.0};
  if (trajectory.pattern == TrajectoryPattern::Lawnmower) {
    const double across = trajectory.altitude * camera.height / camera.fy;
    const double line_spacing = across * (1.0 - trajectory.overlap);
    const int lines = static_cast<int>(std::floor(scene.extent_y / line_spacing + 1e-9)) + 1;
    line_y.clear();
    for (int k = 0; k < lines; ++k) line_y.push_back(k * line_spacing - 0.5 * (lines - 1) * line_spacing);
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> attitude(0.0, trajectory.attitude_jitter_deg * kDeg);
  std::normal_distribution<double> altitude(0.0, trajectory.altitude_jitter);
  std::vector<TrajectoryEntry> out;
  int id = 0;
  for (std::size_t line = 0; line < line_y.size(); ++line) {
    const bool forward = line % 2 == 0;
    for (int k = 0; k < per_line; ++k) {
      const double along = k * spacing;
      const double x = forward ? along : (per_line - 1) * spacing - along;
      const double roll = trajectory.attitude_jitter_deg > 0 ? attitude(rng) : 0.0;
      const double pitch = trajectory.attitude_jitter_deg > 0 ? attitude(rng) : 0.0;
      const double yaw = trajectory.attitude_jitter_deg > 0 ? attitude(rng) : 0.0;
      const double dz = trajectory.altitude_jitter > 0 ? altitude(rng) : 0.0;
      const Mat3 jitter = (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
                           Eigen::AngleAxisd(roll, Vec3::UnitX()))
                              .toRotationMatrix();
      const Mat3 heading = Eigen::AngleAxisd(forward ? 0.0 : kPi, Vec3::UnitZ()).toRotationMatrix();
      Mat3 r = heading * jitter * Vec3(1.0, -1.0, -1.0).asDiagonal();
      r = Eigen::Quaterniond(r).normalized().toRotationMatrix();
      const Vec3 c(x, line_y[line], trajectory.altitude + dz);
      out.push_back({id, id / trajectory.frame_rate, Pose(r, c)});
      ++id;
    }
  }
  return out;
}

SyntheticDataset render_sequence(const SceneSpec& scene, const TrajectorySpec& trajectory, const CameraModel& camera,
                                 std::uint64_t seed) {
  camera.validate();
  const Terrain terrain(scene);
  SyntheticDataset data;
  data.camera = camera;
  data.trajectory = make_trajectory(scene, trajectory, camera, seed);
  data.planes = terrain.planes();
  data.markers = terrain.markers();
  const Renderer renderer(terrain, camera);
  for (const auto& e : data.trajectory) {
    data.images.push_back(renderer.render(e.pose));
    data.ahrs.push_back(ahrs_from_rotation(e.pose.rotation(), e.timestamp));
  }
  return data;
}

void write_dataset(const SyntheticDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  char name[64];
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%06d.png", data.trajectory[i].id);
    write_png(dir / "images" / name, data.images[i]);
  }
  auto write_text = [&](const std::string& file, const std::string& text) {
    std::ofstream out(dir / file, std::ios::binary);
    out << text;
    if (!out) fail(ErrorKind::IoFailure, "cannot write " + (dir / file).string());
  };
  write_text("camera.txt", camera_to_text(data.camera));
  write_trajectory(dir / "trajectory.txt", data.trajectory);
  write_ahrs(dir / "ahrs.txt", data.ahrs);
  std::string markers;
  char line[160];
  for (const auto& m : data.markers) {
    std::snprintf(line, sizeof(line), "%d %.17g %.17g %.17g\n", m.id, m.position.x(), m.position.y(), m.position.z());
    markers += line;
  }
  write_text("markers.txt", markers);
  std::string manifest = "frames = " + std::to_string(data.images.size()) + "\n";
  manifest += "images = images\ncamera = camera.txt\ntrajectory = trajectory.txt\nahrs = ahrs.txt\nmarkers = markers.txt\n";
  manifest += "planes = " + std::to_string(data.planes.size()) + "\n";
  for (std::size_t i = 0; i < data.planes.size(); ++i) {
    const Plane& p = data.planes[i];
    std::snprintf(line, sizeof(line), "plane_%zu = %.17g %.17g %.17g %.17g\n", i, p.normal.x(), p.normal.y(),
                  p.normal.z(), p.offset);
    manifest += line;
  }
  write_text("manifest.txt", manifest);
}

CameraModel comex_like_camera() {
  CameraModel c;
  c.width = 968;
  c.height = 728;
  c.fx = 1210.0;
  c.fy = 1210.0;
  c.cx = 483.5;
  c.cy = 363.5;
  c.distortion.k1 = -0.05;
  c.distortion.k2 = 0.01;
  return c;
}

SynthSpec synth_spec_from_key_values(const KeyValueFile& f, const std::filesystem::path& base_dir) {
  SynthSpec s;
  const std::string terrain = f.get_string("terrain", "flat");
  if (terrain == "flat") {
    s.scene.terrain = TerrainKind::Flat;
  } else if (terrain == "two_level") {
    s.scene.terrain = TerrainKind::TwoLevel;
  } else if (terrain == "inclined") {
    s.scene.terrain = TerrainKind::Inclined;
  } else {
    fail(ErrorKind::InvalidSpec, "unknown terrain '" + terrain + "' (flat, two_level, inclined)");
  }
  s.scene.step_height = f.get_double("step_height", s.scene.step_height);
  s.scene.step_position = f.get_double("step_position", s.scene.step_position);
  s.scene.incline_deg = f.get_double("incline_deg", s.scene.incline_deg);
  s.scene.texture_seed = static_cast<std::uint64_t>(f.get_int("texture_seed", 7));
  s.scene.blob_density = f.get_double("blob_density", s.scene.blob_density);
  s.scene.extent_x = f.get_double("extent_x", s.scene.extent_x);
  s.scene.extent_y = f.get_double("extent_y", s.scene.extent_y);
  s.scene.marker_spacing = f.get_double("marker_spacing", s.scene.marker_spacing);
  s.scene.marker_radius = f.get_double("marker_radius", s.scene.marker_radius);

  const std::string pattern = f.get_string("pattern", "single_strip");
  if (pattern == "single_strip") {
    s.trajectory.pattern = TrajectoryPattern::SingleStrip;
  } else if (pattern == "lawnmower") {
    s.trajectory.pattern = TrajectoryPattern::Lawnmower;
  } else {
    fail(ErrorKind::InvalidSpec, "unknown pattern '" + pattern + "' (single_strip, lawnmower)");
  }
  s.trajectory.altitude = f.get_double("altitude", s.trajectory.altitude);
  s.trajectory.speed = f.get_double("speed", s.trajectory.speed);
  s.trajectory.frame_rate = f.get_double("frame_rate", s.trajectory.frame_rate);
  s.trajectory.overlap = f.get_double("overlap", s.trajectory.overlap);
  s.trajectory.attitude_jitter_deg = f.get_double("attitude_jitter_deg", s.trajectory.attitude_jitter_deg);
  s.trajectory.altitude_jitter = f.get_double("altitude_jitter", s.trajectory.altitude_jitter);
  s.seed = static_cast<std::uint64_t>(f.get_int("seed", 1));

  if (const auto path = f.find("camera")) {
    f.get_string("camera");
    std::filesystem::path p(*path);
    if (p.is_relative()) p = base_dir / p;
    s.camera = load_camera(p);
  } else if (f.has("fx")) {
    s.camera = camera_from_key_values(f);
  } else {
    s.camera = comex_like_camera();
  }
  try {
    s.camera.validate();
  } catch (const Error& e) {
    fail(ErrorKind::InvalidSpec, e.what());
  }
  return s;
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
  const auto file = KeyValueFile::load(path);
  return synth_spec_from_key_values(file, path.parent_path());
}

SimilarityReport compare_to_reference(std::span<const Vec3> points, std::span<const Vec3> reference) {
  const std::size_t n = points.size();
  if (n != reference.size()) fail(ErrorKind::InvalidArgument, "point and reference counts differ");
  if (n < 3) fail(ErrorKind::DegenerateConfiguration, "similarity needs at least 3 correspondences");
  Vec3 mp = Vec3::Zero();
  Vec3 mr = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mp += points[i];
    mr += reference[i];
  }
  mp /= static_cast<double>(n);
  mr /= static_cast<double>(n);
  Mat3 cross = Mat3::Zero();
  Mat3 cov_p = Mat3::Zero();
  double var_p = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 dp = points[i] - mp;
    cross += (reference[i] - mr) * dp.transpose();
    cov_p += dp * dp.transpose();
    var_p += dp.squaredNorm();
  }
  cross /= static_cast<double>(n);
  var_p /= static_cast<double>(n);
  const Eigen::JacobiSVD<Mat3> shape(cov_p);
  const auto sv = shape.singularValues();
  if (!(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0]) {
    fail(ErrorKind::DegenerateConfiguration, "points are coincident or collinear");
  }
  Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) s(2, 2) = -1.0;
  SimilarityReport r;
  r.rotation = svd.matrixU() * s * svd.matrixV().transpose();
  r.scale = (svd.singularValues().asDiagonal() * s).trace() / var_p;
  r.translation = mr - r.scale * r.rotation * mp;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = (r.scale * r.rotation * points[i] + r.translation - reference[i]).norm();
    r.residuals.push_back(e);
    sum_sq += e * e;
  }
  r.rms = std::sqrt(sum_sq / static_cast<double>(n));
  r.rms_per_axis = std::sqrt(sum_sq / (3.0 * static_cast<double>(n)));
  return r;
}

}  // namespace seqmosaic
