#include "test_support.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace seqmosaic::testkit {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

PlyFile read_ply(const fs::path& path) {
  const std::string data = read_file(path);
  const std::string end_marker = "end_header\n";
  const auto end = data.find(end_marker);
  if (data.rfind("ply\n", 0) != 0 || end == std::string::npos) throw std::runtime_error("not a PLY file");
  PlyFile ply;
  std::istringstream header(data.substr(0, end));
  std::string line;
  std::vector<std::string> properties;
  while (std::getline(header, line)) {
    std::istringstream words(line);
    std::string key;
    words >> key;
    if (key == "format") {
      words >> ply.format;
    } else if (key == "element") {
      std::string name;
      words >> name >> ply.vertex_count;
    } else if (key == "property") {
      std::string type, name;
      words >> type >> name;
      properties.push_back(type + " " + name);
    }
  }
  const std::vector<std::string> expected = {"double x", "double y", "double z",
                                             "uchar red", "uchar green", "uchar blue"};
  if (properties != expected) throw std::runtime_error("unexpected vertex layout");
  const std::string body = data.substr(end + end_marker.size());
  ply.body_bytes = body.size();
  if (ply.format == "binary_little_endian") {
    if (body.size() != ply.vertex_count * 27) throw std::runtime_error("body size mismatch");
    for (std::size_t i = 0; i < ply.vertex_count; ++i) {
      const char* rec = body.data() + i * 27;
      CloudPoint p;
      double xyz[3];
      std::memcpy(xyz, rec, 24);
      p.position = {xyz[0], xyz[1], xyz[2]};
      p.color = {static_cast<std::uint8_t>(rec[24]), static_cast<std::uint8_t>(rec[25]),
                 static_cast<std::uint8_t>(rec[26])};
      ply.points.push_back(p);
    }
  } else {
    std::istringstream in(body);
    for (std::size_t i = 0; i < ply.vertex_count; ++i) {
      CloudPoint p;
      int r, g, b;
      in >> p.position.x() >> p.position.y() >> p.position.z() >> r >> g >> b;
      p.color = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)};
      ply.points.push_back(p);
    }
    if (!in) throw std::runtime_error("truncated ASCII body");
  }
  return ply;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("seqmosaic_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

CameraModel small_camera(int divisor) { return comex_like_camera().downscaled(divisor); }

fs::path write_synthetic_dataset(const fs::path& dir, const SceneSpec& scene, const TrajectorySpec& trajectory,
                                 const CameraModel& camera, std::uint64_t seed, const std::string& extra_config) {
  const auto data = render_sequence(scene, trajectory, camera, seed);
  write_dataset(data, dir);
  std::ofstream cfg(dir / "pipeline.cfg");
  cfg << "camera = camera.txt\nimages = images\ninput_mode = replay_with_trajectory\n"
      << "trajectory = trajectory.txt\nahrs = ahrs.txt\noutput = runs\n"
      << extra_config;
  return dir;
}

fs::path golden_dir() { return SEQMOSAIC_GOLDEN_DIR; }

}  // namespace seqmosaic::testkit
