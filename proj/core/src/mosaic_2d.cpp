#include "seqmosaic/mosaic_2d.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <Eigen/LU>

#include "seqmosaic/error.hpp"
#include "seqmosaic/image_io.hpp"

namespace seqmosaic {

namespace {

constexpr double kPi = 3.14159265358979323846;
const double kGrazingSin = std::sin(2.0 * kPi / 180.0);

std::string fixed10(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10f", value);
  std::string s(buf);
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

}  // namespace

PlaneFrame build_plane_frame(const Plane& plane, std::span<const Vec3> inliers, const Vec3& hint_axis) {
  if (inliers.empty()) fail(ErrorKind::InvalidArgument, "plane frame needs at least one inlier");
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : inliers) centroid += p;
  centroid /= static_cast<double>(inliers.size());

  const Vec3 n = plane.normal.normalized();
  const double cos_limit = std::cos(5.0 * kPi / 180.0);
  auto usable = [&](const Vec3& axis) {
    const double len = axis.norm();
    return len > 0.0 && std::abs(axis.dot(n)) / len < cos_limit;
  };
  Vec3 axis = hint_axis;
  if (!usable(axis)) axis = Vec3::UnitY();
  if (!usable(axis)) fail(ErrorKind::DegenerateHint, "hint and fallback axis are both parallel to the normal");

  PlaneFrame frame;
  frame.normal = n;
  frame.u_axis = (axis - axis.dot(n) * n).normalized();
  frame.v_axis = n.cross(frame.u_axis);
  frame.origin = Plane{n, plane.offset}.project(centroid);
  return frame;
}

std::optional<PixelCoord> Homography::apply(double a, double b) const {
  const Vec3 p = h * Vec3(a, b, 1.0);
  if (!(p.z() * front_sign > 0.0)) return std::nullopt;
  return PixelCoord{p.x() / p.z(), p.y() / p.z()};
}

Homography plane_to_image_homography(const Pose& pose, const CameraModel& camera, const PlaneFrame& frame) {
  const double height = frame.normal.dot(pose.center()) - frame.normal.dot(frame.origin);
  if (std::abs(height) <= 1e-9) fail(ErrorKind::CameraOnPlane, "camera center lies on the projection plane");
  const Mat3& r = pose.rotation();
  Mat3 m;
  m.col(0) = r.transpose() * frame.u_axis;
  m.col(1) = r.transpose() * frame.v_axis;
  m.col(2) = r.transpose() * (frame.origin - pose.center());
  Homography result;
  result.h = camera.intrinsic_matrix() * m;
  const double h22 = result.h(2, 2);
  if (std::abs(h22) > 1e-12) {
    result.h /= h22;
    result.front_sign = h22 > 0.0 ? 1.0 : -1.0;
  }
  return result;
}

std::optional<Vec2> WorldFile::invert(double x, double y) const {
  const double det = a * e - b * d;
  if (det == 0.0) return std::nullopt;
  const double dx = x - c;
  const double dy = y - f;
  return Vec2((e * dx - b * dy) / det, (a * dy - d * dx) / det);
}

std::string WorldFile::to_text() const {
  std::string out;
  for (double v : {a, d, b, e, c, f}) out += fixed10(v) + "\n";
  return out;
}

WorldFile WorldFile::parse(const std::string& text) {
  std::istringstream in(text);
  double v[6];
  for (double& x : v) {
    if (!(in >> x)) fail(ErrorKind::ParseError, "world file needs six numbers");
  }
  return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

WorldFile WorldFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoFailure, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void WorldFile::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  out << to_text();
  if (!out) fail(ErrorKind::IoFailure, "cannot write " + path.string());
}

WorldFile Tile::world_file() const {
  return {gsd, 0.0, 0.0, -gsd, static_cast<double>(col0) * gsd, -static_cast<double>(row0) * gsd};
}

Tile rectify_image(const Image& image, const Homography& homography, const CameraModel& camera, double gsd,
                   const RectifyOptions& options) {
  if (!(gsd > 0.0)) fail(ErrorKind::InvalidArgument, "gsd must be positive");
  const Mat3 h_inv = homography.h.inverse();
  if (!h_inv.allFinite()) fail(ErrorKind::InvalidArgument, "homography is singular");
  const Mat3 k_inv = camera.intrinsic_matrix().inverse();
  const Vec3 plane_normal_cam = [&] {
    // K^-1 H is proportional to [R^T u | R^T v | R^T (origin - C)].
    const Mat3 m = k_inv * homography.h;
    return Vec3(m.col(0).cross(m.col(1)).normalized());
  }();

  const bool distorted = !camera.distortion.is_zero();
  double r2_max = std::numeric_limits<double>::infinity();
  if (distorted) {
    r2_max = 0.0;
    const double w = camera.width - 1.0;
    const double hgt = camera.height - 1.0;
    for (const auto& px : {PixelCoord{0, 0}, PixelCoord{w, 0}, PixelCoord{0, hgt}, PixelCoord{w, hgt},
                           PixelCoord{w / 2, 0}, PixelCoord{0, hgt / 2}, PixelCoord{w, hgt / 2},
                           PixelCoord{w / 2, hgt}}) {
      try {
        const PixelCoord und = undistort_pixel(px, camera);
        const Vec2 xn((und.u - camera.cx) / camera.fx, (und.v - camera.cy) / camera.fy);
        r2_max = std::max(r2_max, xn.squaredNorm());
      } catch (const Error&) {
        r2_max = std::numeric_limits<double>::infinity();
      }
    }
    r2_max *= 1.1 * 1.1;
  }

  // Footprint from the raster border.
  double cmin = std::numeric_limits<double>::infinity();
  double cmax = -cmin;
  double rmin = cmin;
  double rmax = -cmin;
  int valid = 0;
  const int steps = 32;
  for (int edge = 0; edge < 4; ++edge) {
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      const double w = camera.width - 1.0;
      const double hgt = camera.height - 1.0;
      PixelCoord px;
      switch (edge) {
        case 0: px = {t * w, 0.0}; break;
        case 1: px = {w, t * hgt}; break;
        case 2: px = {t * w, hgt}; break;
        default: px = {0.0, t * hgt}; break;
      }
      PixelCoord und;
      try {
        und = distorted ? undistort_pixel(px, camera) : px;
      } catch (const Error&) {
        continue;
      }
      const Vec3 ray = (k_inv * Vec3(und.u, und.v, 1.0)).normalized();
      if (std::abs(ray.dot(plane_normal_cam)) <= kGrazingSin) continue;
      const Vec3 q = h_inv * Vec3(und.u, und.v, 1.0);
      if (!(q.z() * homography.front_sign > 1e-15 * q.norm())) continue;
      const double col = q.x() / q.z() / gsd;
      const double row = -q.y() / q.z() / gsd;
      cmin = std::min(cmin, col);
      cmax = std::max(cmax, col);
      rmin = std::min(rmin, row);
      rmax = std::max(rmax, row);
      ++valid;
    }
  }
  if (valid < 3) fail(ErrorKind::EmptyFootprint, "image does not see the projection plane");
  auto clip = [&](double lo, double hi) {
    long long a = static_cast<long long>(std::ceil(std::max(lo, -9e15)));
    long long b = static_cast<long long>(std::floor(std::min(hi, 9e15)));
    if (b - a + 1 > options.max_side) {
      const long long mid = a + (b - a) / 2;
      a = mid - options.max_side / 2;
      b = a + options.max_side - 1;
    }
    return std::pair{a, b};
  };
  const auto [c0, c1] = clip(cmin, cmax);
  const auto [r0, r1] = clip(rmin, rmax);
  if (c1 < c0 || r1 < r0 || (cmax - cmin) * (rmax - rmin) < 1.0) {
    fail(ErrorKind::EmptyFootprint, "projected footprint has no area at this gsd");
  }

  Tile tile;
  tile.gsd = gsd;
  tile.col0 = c0;
  tile.row0 = r0;
  const int tw = static_cast<int>(c1 - c0 + 1);
  const int th = static_cast<int>(r1 - r0 + 1);
  tile.raster = MaskedImage(tw, th);
  const Mat3& hm = homography.h;
  const Vec3 step = hm.col(0) * gsd;
  for (int j = 0; j < th; ++j) {
    const double b = -static_cast<double>(r0 + j) * gsd;
    Vec3 p = hm * Vec3(static_cast<double>(c0) * gsd, b, 1.0);
    for (int i = 0; i < tw; ++i, p += step) {
      if (!(p.z() * homography.front_sign > 0.0)) continue;
      PixelCoord px{p.x() / p.z(), p.y() / p.z()};
      if (distorted) {
        const Vec2 xn((px.u - camera.cx) / camera.fx, (px.v - camera.cy) / camera.fy);
        if (xn.squaredNorm() > r2_max) continue;
        const Vec2 xd = distort_normalized(xn, camera.distortion);
        px = {camera.cx + camera.fx * xd.x(), camera.cy + camera.fy * xd.y()};
      }
      const auto color = sample_bilinear(image, px);
      if (!color) continue;
      tile.raster.image.set(i, j, to_rgb(*color));
      tile.raster.set_valid(i, j, true);
    }
  }
  if (tile.raster.valid_count() == 0) fail(ErrorKind::EmptyFootprint, "no tile pixel maps into the image");
  return tile;
}

double ground_sample_distance(const Pose& pose, const CameraModel& camera, const Plane& plane) {
  auto hit = [&](double u, double v) -> std::optional<Vec3> {
    const Ray ray = unproject_undistorted({u, v}, pose, camera);
    const double denom = plane.normal.dot(ray.direction);
    if (std::abs(denom) < 1e-12) return std::nullopt;
    const double t = (plane.offset - plane.normal.dot(ray.origin)) / denom;
    if (!(t > 0.0)) return std::nullopt;
    return ray.at(t);
  };
  const auto p0 = hit(camera.cx, camera.cy);
  const auto pu = hit(camera.cx + 1.0, camera.cy);
  const auto pv = hit(camera.cx, camera.cy + 1.0);
  if (p0 && pu && pv) return 0.5 * ((*pu - *p0).norm() + (*pv - *p0).norm());
  return std::abs(plane.signed_distance(pose.center())) / camera.mean_focal();
}

MosaicSegment::MosaicSegment(int id, const PlaneFrame& frame, double gsd, BlendRule blend, int max_side)
    : id_(id), frame_(frame), gsd_(gsd), blend_(blend), max_side_(max_side) {
  if (!(gsd > 0.0)) fail(ErrorKind::InvalidArgument, "gsd must be positive");
  if (max_side <= 0) fail(ErrorKind::InvalidArgument, "canvas cap must be positive");
}

bool MosaicSegment::fits(const Tile& tile) const {
  const long long tc1 = tile.col0 + tile.raster.width() - 1;
  const long long tr1 = tile.row0 + tile.raster.height() - 1;
  if (canvas_.width() == 0) {
    return tile.raster.width() <= max_side_ && tile.raster.height() <= max_side_;
  }
  const long long c0 = std::min(col0_, tile.col0);
  const long long r0 = std::min(row0_, tile.row0);
  const long long c1 = std::max(col0_ + canvas_.width() - 1, tc1);
  const long long r1 = std::max(row0_ + canvas_.height() - 1, tr1);
  return c1 - c0 + 1 <= max_side_ && r1 - r0 + 1 <= max_side_;
}

void MosaicSegment::grow(long long c0, long long r0, long long c1, long long r1) {
  const int w = static_cast<int>(c1 - c0 + 1);
  const int h = static_cast<int>(r1 - r0 + 1);
  if (w == canvas_.width() && h == canvas_.height() && c0 == col0_ && r0 == row0_) return;
  MaskedImage next(w, h);
  std::vector<float> next_accum;
  const bool feather = blend_ == BlendRule::Feather;
  if (feather) next_accum.assign(static_cast<std::size_t>(w) * h * 4, 0.0F);
  const int dx = static_cast<int>(col0_ - c0);
  const int dy = static_cast<int>(row0_ - r0);
  const int ow = canvas_.width();
  for (int y = 0; y < canvas_.height(); ++y) {
    const std::size_t src = static_cast<std::size_t>(y) * ow;
    const std::size_t dst = static_cast<std::size_t>(y + dy) * w + dx;
    std::copy_n(canvas_.image.bytes().begin() + static_cast<std::ptrdiff_t>(src * 3), ow * 3,
                next.image.bytes().begin() + static_cast<std::ptrdiff_t>(dst * 3));
    std::copy_n(canvas_.mask.begin() + static_cast<std::ptrdiff_t>(src), ow,
                next.mask.begin() + static_cast<std::ptrdiff_t>(dst));
    if (feather) {
      std::copy_n(accum_.begin() + static_cast<std::ptrdiff_t>(src * 4), ow * 4,
                  next_accum.begin() + static_cast<std::ptrdiff_t>(dst * 4));
    }
  }
  canvas_ = std::move(next);
  accum_ = std::move(next_accum);
  col0_ = c0;
  row0_ = r0;
}

void MosaicSegment::composite(const Tile& tile, int frame_id) {
  if (std::abs(tile.gsd - gsd_) > 1e-12 * gsd_) fail(ErrorKind::InvalidArgument, "tile gsd differs from segment gsd");
  if (!fits(tile)) fail(ErrorKind::InvalidArgument, "tile would exceed the canvas size cap");
  const long long tc1 = tile.col0 + tile.raster.width() - 1;
  const long long tr1 = tile.row0 + tile.raster.height() - 1;
  if (canvas_.width() == 0) {
    col0_ = tile.col0;
    row0_ = tile.row0;
    canvas_ = MaskedImage(tile.raster.width(), tile.raster.height());
    if (blend_ == BlendRule::Feather) accum_.assign(canvas_.mask.size() * 4, 0.0F);
  } else {
    grow(std::min(col0_, tile.col0), std::min(row0_, tile.row0), std::max(col0_ + canvas_.width() - 1, tc1),
         std::max(row0_ + canvas_.height() - 1, tr1));
  }
  const int dx = static_cast<int>(tile.col0 - col0_);
  const int dy = static_cast<int>(tile.row0 - row0_);
  std::vector<float> weight;
  if (blend_ == BlendRule::Feather) weight = edge_distance(tile.raster);
  for (int y = 0; y < tile.raster.height(); ++y) {
    for (int x = 0; x < tile.raster.width(); ++x) {
      if (!tile.raster.valid(x, y)) continue;
      const Rgb c = tile.raster.image.at(x, y);
      const int cx = x + dx;
      const int cy = y + dy;
      if (blend_ == BlendRule::LastWriteWins) {
        canvas_.image.set(cx, cy, c);
      } else {
        const float w = weight[static_cast<std::size_t>(y) * tile.raster.width() + x];
        float* acc = &accum_[(static_cast<std::size_t>(cy) * canvas_.width() + cx) * 4];
        acc[0] += w * c.r;
        acc[1] += w * c.g;
        acc[2] += w * c.b;
        acc[3] += w;
        canvas_.image.set(cx, cy, to_rgb(Vec3(acc[0], acc[1], acc[2]) / acc[3]));
      }
      canvas_.set_valid(cx, cy, true);
    }
  }
  frames_.push_back(frame_id);
}

Vec2 MosaicSegment::plane_to_pixel(const Vec2& ab) const {
  return {ab.x() / gsd_ - static_cast<double>(col0_), -ab.y() / gsd_ - static_cast<double>(row0_)};
}

Vec2 MosaicSegment::pixel_to_plane(const Vec2& col_row) const {
  return {(col_row.x() + static_cast<double>(col0_)) * gsd_, -(col_row.y() + static_cast<double>(row0_)) * gsd_};
}

WorldFile MosaicSegment::world_file() const {
  const Vec2 o = canvas_origin();
  return {gsd_, 0.0, 0.0, -gsd_, o.x(), o.y()};
}

std::vector<float> edge_distance(const MaskedImage& image) {
  const int w = image.width();
  const int h = image.height();
  constexpr float kInf = 1e30F;
  std::vector<float> d(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) d[static_cast<std::size_t>(y) * w + x] = image.valid(x, y) ? kInf : 0.0F;
  }
  // Outside the raster counts as invalid.
  auto get = [&](int x, int y) { return (x < 0 || y < 0 || x >= w || y >= h) ? 0.0F : d[static_cast<std::size_t>(y) * w + x]; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float& v = d[static_cast<std::size_t>(y) * w + x];
      if (v == 0.0F) continue;
      v = std::min({v, get(x - 1, y) + 3.0F, get(x, y - 1) + 3.0F, get(x - 1, y - 1) + 4.0F, get(x + 1, y - 1) + 4.0F});
    }
  }
  for (int y = h - 1; y >= 0; --y) {
    for (int x = w - 1; x >= 0; --x) {
      float& v = d[static_cast<std::size_t>(y) * w + x];
      if (v == 0.0F) continue;
      v = std::min({v, get(x + 1, y) + 3.0F, get(x, y + 1) + 3.0F, get(x + 1, y + 1) + 4.0F, get(x - 1, y + 1) + 4.0F});
    }
  }
  for (float& v : d) v /= 3.0F;
  return d;
}

SegmentDecision segment_reinit_check(const Plane& current, const PlaneFitResult& new_fit, double scene_scale,
                                     const ReinitConfig& config) {
  const Plane& next = new_fit.plane;
  if (normal_angle(current.normal, next.normal) > config.max_normal_change_deg * kPi / 180.0) {
    return SegmentDecision::Reinitialize;
  }
  if (new_fit.report.rms_residual > config.rel_residual_max * scene_scale) return SegmentDecision::Reinitialize;
  const double d_projected = next.normal.dot(current.project(new_fit.report.centroid));
  if (std::abs(next.offset - d_projected) > config.max_offset_change * scene_scale) {
    return SegmentDecision::Reinitialize;
  }
  return SegmentDecision::Continue;
}

void write_tile(const std::filesystem::path& directory, const std::string& stem, const Tile& tile) {
  std::filesystem::create_directories(directory);
  write_png(directory / (stem + ".png"), tile.raster);
  tile.world_file().save(directory / (stem + ".pgw"));
}

void write_segment(const std::filesystem::path& directory, const MosaicSegment& segment) {
  if (segment.empty()) return;
  std::filesystem::create_directories(directory);
  char stem[64];
  std::snprintf(stem, sizeof(stem), "segment_%03d", segment.id());
  write_png(directory / (std::string(stem) + ".png"), segment.canvas());
  segment.world_file().save(directory / (std::string(stem) + ".pgw"));
}

std::string segment_manifest_entry(const MosaicSegment& segment) {
  const PlaneFrame& f = segment.plane_frame();
  auto vec = [](const Vec3& v) { return fixed10(v.x()) + " " + fixed10(v.y()) + " " + fixed10(v.z()); };
  std::ostringstream out;
  out << "segment " << segment.id() << "\n";
  out << "  normal " << vec(f.normal) << "\n";
  out << "  offset " << fixed10(f.normal.dot(f.origin)) << "\n";
  out << "  origin " << vec(f.origin) << "\n";
  out << "  u_axis " << vec(f.u_axis) << "\n";
  out << "  v_axis " << vec(f.v_axis) << "\n";
  out << "  gsd " << fixed10(segment.gsd()) << "\n";
  out << "  canvas " << segment.canvas().width() << " " << segment.canvas().height() << "\n";
  out << "  frames";
  for (int id : segment.frames()) out << " " << id;
  out << "\n";
  return out.str();
}

}  // namespace seqmosaic
