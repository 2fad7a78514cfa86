#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "seqmosaic/camera_geometry.hpp"
#include "seqmosaic/image.hpp"
#include "seqmosaic/key_value.hpp"
#include "seqmosaic/mosaic_2d.hpp"
#include "seqmosaic/plane_fitting.hpp"
#include "seqmosaic/pose_engine.hpp"
#include "seqmosaic/projection_3d.hpp"
#include "seqmosaic/stream_hub.hpp"
#include "seqmosaic/stream_server.hpp"

namespace seqmosaic {

enum class InputMode { ImageDirectory, ReplayWithTrajectory };
enum class PlaneSource { Ransac, Ahrs };

struct RunConfig {
  std::filesystem::path camera;
  InputMode input_mode = InputMode::ImageDirectory;
  std::filesystem::path images;
  std::filesystem::path trajectory;  // replay poses
  std::filesystem::path ahrs;        // gravity for the ahrs plane source
  double fps = 0.5;
  int divisor = 1;
  PlaneSource plane_source = PlaneSource::Ransac;
  PoseEngineConfig engine;
  double ransac_threshold = 0.02;  // fraction of the median keyframe-to-tie-point distance
  int ransac_iterations = 500;
  PlanarityConfig planarity;
  ReinitConfig reinit;
  double gsd = 0.0;  // 0: from the first keyframe of each segment
  BlendRule blend = BlendRule::LastWriteWins;
  GridSpec grid;
  int max_canvas_side = 16384;
  bool write_tiles = true;
  std::filesystem::path output = "runs";
  std::optional<ListenAddress> listen;
  std::filesystem::path web_root;
  HubOptions stream;
  std::size_t queue_capacity = 4;
  std::uint64_t seed = 1;

  /// Throws ConfigError.
  void validate() const;
};

/// Relative paths resolve against `base_dir`. Unknown keys are a ConfigError.
RunConfig run_config_from_key_values(const KeyValueFile& file, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

struct StageTiming {
  std::size_t samples = 0;
  double p50_ms = 0.0;
  double p90_ms = 0.0;
  double max_ms = 0.0;
};

struct RunReport {
  std::string status = "completed";  // completed, failed, interrupted
  std::string failure;
  int frames_processed = 0;
  int frames_tracked = 0;
  int frames_lost = 0;
  int frames_pending = 0;
  int keyframes = 0;
  int restarts = 0;
  int nonplanar_skipped = 0;
  int segments = 0;
  int chunks = 0;
  std::size_t points = 0;
  double wall_seconds = 0.0;
  double pose_rate_hz = 0.0;   // tracked frames over the processing span
  double cloud_rate_hz = 0.0;  // chunk emissions between the first and the last chunk
  std::map<std::string, StageTiming> stages;
  std::filesystem::path run_directory;

  std::string to_text() const;
  static RunReport parse(const std::string& text);
};

/// Reads <run-dir>/report.txt. Throws InputError.
RunReport read_report(const std::filesystem::path& run_directory);

/// Box-filter average over divisor x divisor blocks; sizes floor-divided.
Image downscale(const Image& image, int divisor);

struct RunOptions {
  bool fast = false;            // no pacing sleep
  std::optional<bool> batch;    // default: interactive only with a stream listener
};

/// acquisition -> pose engine -> plane fitting -> 2D mosaic -> 3D projection,
/// one thread per stage, each fed by a bounded queue, every product also
/// published on the stream hub.
class Pipeline {
 public:
  /// An external hub lets in-process clients observe the run; without one
  /// the pipeline owns its hub. A server is started when config.listen is set.
  Pipeline(RunConfig config, RunOptions options, StreamHub* hub = nullptr);
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  /// Starts the stream server early so the port is known before run().
  void start_server();
  /// Blocking. Throws ConfigError or InputError before any stage starts.
  RunReport run();
  /// Ends a run early; safe from any thread.
  void request_stop();
  /// Same effect as a client's restart_acquisition command.
  void request_restart();

  StreamHub& hub();
  std::optional<unsigned short> port() const;
  bool interactive() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Files matching *.png in name order; the trailing digits of each stem are
/// the frame id when every file has them, otherwise the position.
std::vector<std::pair<int, std::filesystem::path>> list_frames(const std::filesystem::path& directory);

}  // namespace seqmosaic
