#include "seqmosaic/camera_geometry.hpp"

#include <cmath>
#include <iostream>
#include <sstream>

#include "seqmosaic/error.hpp"
#include "seqmosaic/key_value.hpp"

namespace seqmosaic {

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) fail(ErrorKind::InvalidArgument, "focal lengths must be positive");
  if (width <= 0 || height <= 0) fail(ErrorKind::InvalidArgument, "raster size must be positive");
  if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height)) {
    fail(ErrorKind::InvalidArgument, "principal point must lie inside the raster");
  }
  const auto& d = distortion;
  for (double c : {d.k1, d.k2, d.k3, d.p1, d.p2}) {
    if (!std::isfinite(c)) fail(ErrorKind::InvalidArgument, "distortion coefficients must be finite");
  }
}

Mat3 CameraModel::intrinsic_matrix() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

CameraModel CameraModel::downscaled(int divisor) const {
  if (divisor < 1) fail(ErrorKind::InvalidArgument, "divisor must be >= 1");
  CameraModel out = *this;
  const double d = divisor;
  const double shift = 0.5 * (d - 1.0);
  out.fx = fx / d;
  out.fy = fy / d;
  out.cx = (cx - shift) / d;
  out.cy = (cy - shift) / d;
  out.width = width / divisor;
  out.height = height / divisor;
  return out;
}

CameraModel camera_from_key_values(const KeyValueFile& file) {
  CameraModel camera;
  camera.fx = file.get_double("fx");
  camera.fy = file.get_double("fy");
  camera.cx = file.get_double("cx");
  camera.cy = file.get_double("cy");
  camera.width = static_cast<int>(file.get_int("width"));
  camera.height = static_cast<int>(file.get_int("height"));
  camera.distortion.k1 = file.get_double("k1", 0.0);
  camera.distortion.k2 = file.get_double("k2", 0.0);
  camera.distortion.k3 = file.get_double("k3", 0.0);
  camera.distortion.p1 = file.get_double("p1", 0.0);
  camera.distortion.p2 = file.get_double("p2", 0.0);
  for (const char* extra : {"k4", "k5", "k6", "s1", "s2", "s3", "s4", "b1", "b2"}) {
    if (file.has(extra)) {
      std::cerr << "warning: " << file.origin() << ": ignoring unsupported distortion coefficient '" << extra
                << "'\n";
    }
  }
  camera.validate();
  return camera;
}

CameraModel load_camera(const std::filesystem::path& path) {
  return camera_from_key_values(KeyValueFile::load(path));
}

std::string camera_to_text(const CameraModel& camera) {
  std::ostringstream out;
  out.precision(17);
  out << "fx = " << camera.fx << "\nfy = " << camera.fy << "\ncx = " << camera.cx << "\ncy = " << camera.cy
      << "\nwidth = " << camera.width << "\nheight = " << camera.height << "\nk1 = " << camera.distortion.k1
      << "\nk2 = " << camera.distortion.k2 << "\nk3 = " << camera.distortion.k3
      << "\np1 = " << camera.distortion.p1 << "\np2 = " << camera.distortion.p2 << "\n";
  return out.str();
}

Pose::Pose(const Mat3& rotation, const Vec3& center) : rotation_(rotation), center_(center) {
  if (!rotation.allFinite() || !center.allFinite()) fail(ErrorKind::InvalidArgument, "pose must be finite");
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho > 1e-9) fail(ErrorKind::InvalidArgument, "rotation is not orthonormal");
  if (std::abs(rotation.determinant() - 1.0) > 1e-9) fail(ErrorKind::InvalidArgument, "rotation determinant is not +1");
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

Mat3 rotation_exp(const Vec3& omega) {
  const double angle = omega.norm();
  if (angle < 1e-12) return Mat3::Identity() + skew(omega);
  return Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
}

Vec3 rotation_log(const Mat3& rotation) {
  const Eigen::AngleAxisd aa(rotation);
  return aa.angle() * aa.axis();
}

Pose Pose::retract(const Vec6& delta) const {
  Eigen::Quaterniond q(rotation_ * rotation_exp(delta.head<3>()));
  q.normalize();
  return Pose(q.toRotationMatrix(), center_ + delta.tail<3>());
}

Pose Pose::transformed(const Mat3& motion_rotation, const Vec3& motion_translation) const {
  Eigen::Quaterniond q(motion_rotation * rotation_);
  q.normalize();
  return Pose(q.toRotationMatrix(), motion_rotation * center_ + motion_translation);
}

Vec2 distort_normalized(const Vec2& xy, const DistortionCoefficients& d) {
  const double x = xy.x();
  const double y = xy.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
  return {x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x),
          y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y};
}

Vec2 undistort_normalized(const Vec2& distorted, const DistortionCoefficients& d, int max_iterations,
                          double tolerance) {
  if (d.is_zero()) return distorted;
  Vec2 xy = distorted;
  double residual = (distort_normalized(xy, d) - distorted).norm();
  for (int it = 0; it < max_iterations && residual > 1e-15; ++it) {
    const double x = xy.x();
    const double y = xy.y();
    const double r2 = x * x + y * y;
    const double radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
    const Vec2 tangential(2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x), d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y);
    const Vec2 next = (distorted - tangential) / radial;
    const double next_residual = (distort_normalized(next, d) - distorted).norm();
    if (!std::isfinite(next_residual)) break;
    if (next_residual >= residual && residual <= tolerance) break;
    xy = next;
    residual = next_residual;
  }
  if (!(residual <= tolerance)) {
    fail(ErrorKind::NoConvergence, "undistortion did not converge (residual " + std::to_string(residual) + ")");
  }
  return xy;
}

PixelCoord project(const Vec3& point, const Pose& pose, const CameraModel& camera, bool apply_distortion) {
  const Vec3 pc = pose.to_camera(point);
  if (pc.z() <= 1e-12) fail(ErrorKind::BehindCamera, "point has non-positive depth");
  Vec2 xy(pc.x() / pc.z(), pc.y() / pc.z());
  if (apply_distortion) xy = distort_normalized(xy, camera.distortion);
  return {camera.cx + camera.fx * xy.x(), camera.cy + camera.fy * xy.y()};
}

PixelCoord undistort_pixel(const PixelCoord& pixel, const CameraModel& camera) {
  if (camera.distortion.is_zero()) return pixel;
  const Vec2 distorted((pixel.u - camera.cx) / camera.fx, (pixel.v - camera.cy) / camera.fy);
  const Vec2 xy = undistort_normalized(distorted, camera.distortion);
  return {camera.cx + camera.fx * xy.x(), camera.cy + camera.fy * xy.y()};
}

PixelCoord distort_pixel(const PixelCoord& pixel, const CameraModel& camera) {
  if (camera.distortion.is_zero()) return pixel;
  const Vec2 xy((pixel.u - camera.cx) / camera.fx, (pixel.v - camera.cy) / camera.fy);
  const Vec2 d = distort_normalized(xy, camera.distortion);
  return {camera.cx + camera.fx * d.x(), camera.cy + camera.fy * d.y()};
}

Ray unproject_undistorted(const PixelCoord& pixel, const Pose& pose, const CameraModel& camera) {
  const Vec3 dir_cam((pixel.u - camera.cx) / camera.fx, (pixel.v - camera.cy) / camera.fy, 1.0);
  return {pose.center(), (pose.rotation() * dir_cam).normalized()};
}

Ray unproject(const PixelCoord& pixel, const Pose& pose, const CameraModel& camera) {
  return unproject_undistorted(undistort_pixel(pixel, camera), pose, camera);
}

std::optional<Vec3> sample_bilinear(const Image& image, const PixelCoord& pixel) {
  if (image.empty() || !std::isfinite(pixel.u) || !std::isfinite(pixel.v)) return std::nullopt;
  const double fu = std::floor(pixel.u);
  const double fv = std::floor(pixel.v);
  if (fu < 0.0 || fv < 0.0) return std::nullopt;
  const double wx = pixel.u - fu;
  const double wy = pixel.v - fv;
  const int x0 = static_cast<int>(fu);
  const int y0 = static_cast<int>(fv);
  if (x0 > image.width() - 1 || y0 > image.height() - 1) return std::nullopt;
  // The far neighbour only has to exist when it carries weight.
  int x1 = x0 + 1;
  int y1 = y0 + 1;
  if (x1 > image.width() - 1) {
    if (wx != 0.0) return std::nullopt;
    x1 = x0;
  }
  if (y1 > image.height() - 1) {
    if (wy != 0.0) return std::nullopt;
    y1 = y0;
  }
  const std::uint8_t* p00 = image.pixel(x0, y0);
  const std::uint8_t* p10 = image.pixel(x1, y0);
  const std::uint8_t* p01 = image.pixel(x0, y1);
  const std::uint8_t* p11 = image.pixel(x1, y1);
  Vec3 out;
  for (int c = 0; c < 3; ++c) {
    const double top = p00[c] + wx * (p10[c] - p00[c]);
    const double bottom = p01[c] + wx * (p11[c] - p01[c]);
    out[c] = top + wy * (bottom - top);
  }
  return out;
}

}  // namespace seqmosaic
