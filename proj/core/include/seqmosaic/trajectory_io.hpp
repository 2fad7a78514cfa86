#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "seqmosaic/camera_geometry.hpp"

namespace seqmosaic {

/// One line of a trajectory file: `id timestamp r11 .. r33 cx cy cz`.
struct TrajectoryEntry {
  int id = 0;
  double timestamp = 0.0;
  Pose pose;
};

/// One line of an AHRS file: `timestamp roll pitch yaw`, degrees.
struct AhrsSample {
  double timestamp = 0.0;
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
};

std::vector<TrajectoryEntry> parse_trajectory(const std::string& text, const std::string& origin = "<string>");
std::vector<TrajectoryEntry> read_trajectory(const std::filesystem::path& path);
std::string format_trajectory(const std::vector<TrajectoryEntry>& entries);
void write_trajectory(const std::filesystem::path& path, const std::vector<TrajectoryEntry>& entries);

std::vector<AhrsSample> parse_ahrs(const std::string& text, const std::string& origin = "<string>");
std::vector<AhrsSample> read_ahrs(const std::filesystem::path& path);
void write_ahrs(const std::filesystem::path& path, const std::vector<AhrsSample>& samples);

/// Body-to-level rotation Rz(yaw) * Ry(pitch) * Rx(roll); level frame is z up.
Mat3 ahrs_rotation(const AhrsSample& sample);
/// Inverse of ahrs_rotation for a rotation expressed in a z-up level frame.
AhrsSample ahrs_from_rotation(const Mat3& body_to_level, double timestamp);
/// Gravity direction in the pose's world frame given the camera attitude
/// the AHRS measured at the same instant.
Vec3 gravity_in_world(const Pose& pose, const AhrsSample& sample);
/// Sample nearest in time.
const AhrsSample* nearest_ahrs(const std::vector<AhrsSample>& samples, double timestamp);

}  // namespace seqmosaic
