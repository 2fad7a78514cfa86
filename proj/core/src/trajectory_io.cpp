#include "seqmosaic/trajectory_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <Eigen/SVD>

#include "seqmosaic/error.hpp"

namespace seqmosaic {

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoFailure, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool skip_line(const std::string& line) {
  const auto pos = line.find_first_not_of(" \t\r");
  return pos == std::string::npos || line[pos] == '#';
}

// The file carries the rotation to 17 significant digits; Pose wants it
// orthonormal to 1e-9, so project it back onto SO(3).
Mat3 orthonormalize(const Mat3& r) {
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 out = svd.matrixU() * svd.matrixV().transpose();
  if (out.determinant() < 0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    out = u * svd.matrixV().transpose();
  }
  return out;
}

}  // namespace

std::vector<TrajectoryEntry> parse_trajectory(const std::string& text, const std::string& origin) {
  std::vector<TrajectoryEntry> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (skip_line(line)) continue;
    std::istringstream fields(line);
    TrajectoryEntry e;
    Mat3 r;
    Vec3 c;
    fields >> e.id >> e.timestamp;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) fields >> r(i, j);
    }
    fields >> c.x() >> c.y() >> c.z();
    std::string extra;
    if (!fields || (fields >> extra)) {
      fail(ErrorKind::ParseError, origin + ":" + std::to_string(line_no) + ": expected `id timestamp r11..r33 cx cy cz`");
    }
    const double err = (r.transpose() * r - Mat3::Identity()).norm();
    if (err > 1e-6 || r.determinant() < 0) {
      fail(ErrorKind::ParseError, origin + ":" + std::to_string(line_no) + ": rotation is not orthonormal");
    }
    e.pose = Pose(err > 1e-12 ? orthonormalize(r) : r, c);
    if (!out.empty() && e.id <= out.back().id) {
      fail(ErrorKind::ParseError, origin + ":" + std::to_string(line_no) + ": frame ids must increase");
    }
    out.push_back(e);
  }
  return out;
}

std::vector<TrajectoryEntry> read_trajectory(const std::filesystem::path& path) {
  return parse_trajectory(slurp(path), path.string());
}

std::string format_trajectory(const std::vector<TrajectoryEntry>& entries) {
  std::string out;
  char buf[64];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof(buf), "%d %.6f", e.id, e.timestamp);
    out += buf;
    const Mat3& r = e.pose.rotation();
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        std::snprintf(buf, sizeof(buf), " %.17g", r(i, j));
        out += buf;
      }
    }
    for (int i = 0; i < 3; ++i) {
      std::snprintf(buf, sizeof(buf), " %.17g", e.pose.center()[i]);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

void write_trajectory(const std::filesystem::path& path, const std::vector<TrajectoryEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  out << format_trajectory(entries);
  if (!out) fail(ErrorKind::IoFailure, "cannot write " + path.string());
}

std::vector<AhrsSample> parse_ahrs(const std::string& text, const std::string& origin) {
  std::vector<AhrsSample> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (skip_line(line)) continue;
    std::istringstream fields(line);
    AhrsSample s;
    std::string extra;
    if (!(fields >> s.timestamp >> s.roll >> s.pitch >> s.yaw) || (fields >> extra)) {
      fail(ErrorKind::ParseError, origin + ":" + std::to_string(line_no) + ": expected `timestamp roll pitch yaw`");
    }
    out.push_back(s);
  }
  return out;
}

std::vector<AhrsSample> read_ahrs(const std::filesystem::path& path) { return parse_ahrs(slurp(path), path.string()); }

void write_ahrs(const std::filesystem::path& path, const std::vector<AhrsSample>& samples) {
  std::ofstream out(path, std::ios::binary);
  char buf[128];
  for (const auto& s : samples) {
    std::snprintf(buf, sizeof(buf), "%.6f %.12f %.12f %.12f\n", s.timestamp, s.roll, s.pitch, s.yaw);
    out << buf;
  }
  if (!out) fail(ErrorKind::IoFailure, "cannot write " + path.string());
}

Mat3 ahrs_rotation(const AhrsSample& s) {
  return (Eigen::AngleAxisd(s.yaw * kDeg, Vec3::UnitZ()) * Eigen::AngleAxisd(s.pitch * kDeg, Vec3::UnitY()) *
          Eigen::AngleAxisd(s.roll * kDeg, Vec3::UnitX()))
      .toRotationMatrix();
}

AhrsSample ahrs_from_rotation(const Mat3& r, double timestamp) {
  AhrsSample s;
  s.timestamp = timestamp;
  s.pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0)) / kDeg;
  s.roll = std::atan2(r(2, 1), r(2, 2)) / kDeg;
  s.yaw = std::atan2(r(1, 0), r(0, 0)) / kDeg;
  return s;
}

Vec3 gravity_in_world(const Pose& pose, const AhrsSample& sample) {
  return (pose.rotation() * ahrs_rotation(sample).transpose() * Vec3(0.0, 0.0, -1.0)).normalized();
}

const AhrsSample* nearest_ahrs(const std::vector<AhrsSample>& samples, double timestamp) {
  const AhrsSample* best = nullptr;
  for (const auto& s : samples) {
    if (!best || std::abs(s.timestamp - timestamp) < std::abs(best->timestamp - timestamp)) best = &s;
  }
  return best;
}

}  // namespace seqmosaic
