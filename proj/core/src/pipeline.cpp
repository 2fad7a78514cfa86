#include "seqmosaic/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "seqmosaic/bounded_queue.hpp"
#include "seqmosaic/error.hpp"
#include "seqmosaic/image_io.hpp"
#include "seqmosaic/stream_protocol.hpp"
#include "seqmosaic/trajectory_io.hpp"

namespace seqmosaic {

namespace fs = std::filesystem;
using SteadyClock = std::chrono::steady_clock;

namespace {

[[noreturn]] void config_error(const std::string& msg) { fail(ErrorKind::ConfigError, msg); }

fs::path resolve(const fs::path& base, const std::string& value) {
  const fs::path p(value);
  return p.is_absolute() || base.empty() ? p : base / p;
}

double seconds_since(SteadyClock::time_point t0) {
  return std::chrono::duration<double>(SteadyClock::now() - t0).count();
}

std::string format_name(const char* pattern, int value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, value);
  return buf;
}

StageTiming summarize(std::vector<double> ms) {
  StageTiming t;
  t.samples = ms.size();
  if (ms.empty()) return t;
  std::sort(ms.begin(), ms.end());
  auto rank = [&](double q) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(ms.size())));
    return ms[std::clamp<std::size_t>(k, 1, ms.size()) - 1];
  };
  t.p50_ms = rank(0.5);
  t.p90_ms = rank(0.9);
  t.max_ms = ms.back();
  return t;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) fail(ErrorKind::IoFailure, "cannot write " + path.string());
}

}  // namespace

void RunConfig::validate() const {
  if (camera.empty()) config_error("'camera' is required: path to the calibration file");
  if (images.empty()) config_error("'images' is required: directory of PNG frames");
  if (input_mode == InputMode::ReplayWithTrajectory && trajectory.empty()) {
    config_error("input_mode = replay_with_trajectory needs 'trajectory'");
  }
  if (plane_source == PlaneSource::Ahrs && ahrs.empty()) config_error("plane_source = ahrs needs 'ahrs'");
  if (!(fps > 0)) config_error("'fps' must be positive");
  if (divisor != 1 && divisor != 2 && divisor != 4) config_error("'divisor' must be 1, 2 or 4");
  if (engine.window_size != 3 && engine.window_size != 5) config_error("'window_size' must be 3 or 5");
  if (engine.mosaic_stride < 1) config_error("'mosaic_stride' must be at least 1");
  if (!(ransac_threshold > 0)) config_error("'ransac_threshold' must be positive");
  if (ransac_iterations < 1) config_error("'ransac_iterations' must be at least 1");
  if (gsd < 0) config_error("'gsd' must be 0 (automatic) or positive");
  if (grid.cols < 2 || grid.rows < 2) config_error("'grid_cols' and 'grid_rows' must be at least 2");
  if (max_canvas_side < 16) config_error("'max_canvas_side' must be at least 16");
  if (queue_capacity < 1) config_error("'queue_capacity' must be at least 1");
  stream.rates.validate();
}

RunConfig run_config_from_key_values(const KeyValueFile& file, const fs::path& base_dir) {
  RunConfig c;
  try {
    const auto mode = file.get_string("input_mode", "image_directory");
    if (mode == "image_directory") {
      c.input_mode = InputMode::ImageDirectory;
    } else if (mode == "replay_with_trajectory") {
      c.input_mode = InputMode::ReplayWithTrajectory;
    } else {
      config_error("input_mode must be image_directory or replay_with_trajectory, not '" + mode + "'");
    }
    auto path_key = [&](const char* key) {
      const auto v = file.get_string(key, "");
      return v.empty() ? fs::path{} : resolve(base_dir, v);
    };
    c.camera = path_key("camera");
    c.images = path_key("images");
    c.trajectory = path_key("trajectory");
    c.ahrs = path_key("ahrs");
    c.fps = file.get_double("fps", c.fps);
    c.divisor = static_cast<int>(file.get_int("divisor", c.divisor));
    const auto source = file.get_string("plane_source", "ransac");
    if (source == "ransac") {
      c.plane_source = PlaneSource::Ransac;
    } else if (source == "ahrs") {
      c.plane_source = PlaneSource::Ahrs;
    } else {
      config_error("plane_source must be ransac or ahrs, not '" + source + "'");
    }

    auto& e = c.engine;
    e.window_size = static_cast<int>(file.get_int("window_size", e.window_size));
    e.mosaic_stride = static_cast<int>(file.get_int("mosaic_stride", e.mosaic_stride));
    e.features.max_features = static_cast<int>(file.get_int("max_features", e.features.max_features));
    e.features.min_matches = static_cast<int>(file.get_int("min_matches", e.features.min_matches));
    e.features.tracking_radius = file.get_double("tracking_radius", e.features.tracking_radius);
    e.essential.threshold = file.get_double("essential_threshold", e.essential.threshold);
    e.resection.threshold = file.get_double("resection_threshold", e.resection.threshold);
    e.min_resection_inliers = static_cast<int>(file.get_int("min_resection_inliers", e.min_resection_inliers));
    e.outlier_cutoff = file.get_double("outlier_cutoff", e.outlier_cutoff);
    e.bundle_adjustment.max_iterations =
        static_cast<int>(file.get_int("ba_max_iterations", e.bundle_adjustment.max_iterations));

    c.ransac_threshold = file.get_double("ransac_threshold", c.ransac_threshold);
    c.ransac_iterations = static_cast<int>(file.get_int("ransac_iterations", c.ransac_iterations));
    c.planarity.rel_residual_max = file.get_double("planarity_residual", c.planarity.rel_residual_max);
    c.planarity.min_inlier_fraction = file.get_double("planarity_inlier_fraction", c.planarity.min_inlier_fraction);
    c.reinit.max_normal_change_deg = file.get_double("reinit_normal_deg", c.reinit.max_normal_change_deg);
    c.reinit.rel_residual_max = file.get_double("reinit_residual", c.reinit.rel_residual_max);
    c.reinit.max_offset_change = file.get_double("reinit_offset", c.reinit.max_offset_change);
    c.gsd = file.get_double("gsd", c.gsd);
    const auto blend = file.get_string("blend", "last_write_wins");
    if (blend == "feather") {
      c.blend = BlendRule::Feather;
    } else if (blend == "last_write_wins") {
      c.blend = BlendRule::LastWriteWins;
    } else {
      config_error("blend must be feather or last_write_wins, not '" + blend + "'");
    }
    c.grid.cols = static_cast<int>(file.get_int("grid_cols", c.grid.cols));
    c.grid.rows = static_cast<int>(file.get_int("grid_rows", c.grid.rows));
    c.max_canvas_side = static_cast<int>(file.get_int("max_canvas_side", c.max_canvas_side));
    c.write_tiles = file.get_bool("write_tiles", c.write_tiles);
    c.output = resolve(base_dir, file.get_string("output", "runs"));
    if (const auto listen = file.get_string("listen", ""); !listen.empty()) c.listen = parse_listen_address(listen);
    c.web_root = path_key("web_root");
    c.stream.rates.pose_hz = file.get_double("pose_hz", c.stream.rates.pose_hz);
    c.stream.rates.cloud_hz = file.get_double("cloud_hz", c.stream.rates.cloud_hz);
    c.stream.point_budget = static_cast<std::size_t>(file.get_int("point_budget", 5'000'000));
    c.stream.client_queue_bound = static_cast<std::size_t>(file.get_int("client_queue_bound", 4096));
    c.queue_capacity = static_cast<std::size_t>(file.get_int("queue_capacity", 4));
    c.seed = static_cast<std::uint64_t>(file.get_int("seed", 1));
    c.engine.essential.seed = c.seed;
    c.engine.resection.seed = c.seed;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::ConfigError) throw;
    config_error(file.origin() + ": " + e.what());
  }
  if (const auto unused = file.unused_keys(); !unused.empty()) {
    std::string keys;
    for (const auto& k : unused) keys += (keys.empty() ? "" : ", ") + k;
    config_error(file.origin() + ": unknown keys: " + keys);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  KeyValueFile file;
  try {
    file = KeyValueFile::load(path);
  } catch (const Error& e) {
    config_error(std::string("cannot read config: ") + e.what());
  }
  return run_config_from_key_values(file, path.parent_path());
}

std::string RunReport::to_text() const {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "status = " << status << "\n";
  if (!failure.empty()) out << "failure = " << failure << "\n";
  out << "frames_processed = " << frames_processed << "\n";
  out << "frames_tracked = " << frames_tracked << "\n";
  out << "frames_lost = " << frames_lost << "\n";
  out << "frames_pending = " << frames_pending << "\n";
  out << "keyframes = " << keyframes << "\n";
  out << "restarts = " << restarts << "\n";
  out << "nonplanar_skipped = " << nonplanar_skipped << "\n";
  out << "segments = " << segments << "\n";
  out << "chunks = " << chunks << "\n";
  out << "points = " << points << "\n";
  out << "wall_seconds = " << wall_seconds << "\n";
  out << "pose_rate_hz = " << pose_rate_hz << "\n";
  out << "cloud_rate_hz = " << cloud_rate_hz << "\n";
  for (const auto& [name, t] : stages) {
    out << "stage." << name << ".samples = " << t.samples << "\n";
    out << "stage." << name << ".p50_ms = " << t.p50_ms << "\n";
    out << "stage." << name << ".p90_ms = " << t.p90_ms << "\n";
    out << "stage." << name << ".max_ms = " << t.max_ms << "\n";
  }
  return out.str();
}

RunReport RunReport::parse(const std::string& text) {
  const auto kv = KeyValueFile::parse(text, "report.txt");
  RunReport r;
  r.status = kv.get_string("status");
  r.failure = kv.get_string("failure", "");
  r.frames_processed = static_cast<int>(kv.get_int("frames_processed"));
  r.frames_tracked = static_cast<int>(kv.get_int("frames_tracked"));
  r.frames_lost = static_cast<int>(kv.get_int("frames_lost"));
  r.frames_pending = static_cast<int>(kv.get_int("frames_pending"));
  r.keyframes = static_cast<int>(kv.get_int("keyframes"));
  r.restarts = static_cast<int>(kv.get_int("restarts", 0));
  r.nonplanar_skipped = static_cast<int>(kv.get_int("nonplanar_skipped", 0));
  r.segments = static_cast<int>(kv.get_int("segments"));
  r.chunks = static_cast<int>(kv.get_int("chunks"));
  r.points = static_cast<std::size_t>(kv.get_int("points"));
  r.wall_seconds = kv.get_double("wall_seconds");
  r.pose_rate_hz = kv.get_double("pose_rate_hz");
  r.cloud_rate_hz = kv.get_double("cloud_rate_hz");
  for (const auto& [key, value] : kv.values()) {
    if (!key.starts_with("stage.")) continue;
    const auto dot = key.rfind('.');
    const auto name = key.substr(6, dot - 6);
    const auto field = key.substr(dot + 1);
    auto& t = r.stages[name];
    if (field == "samples") t.samples = static_cast<std::size_t>(kv.get_int(key));
    if (field == "p50_ms") t.p50_ms = kv.get_double(key);
    if (field == "p90_ms") t.p90_ms = kv.get_double(key);
    if (field == "max_ms") t.max_ms = kv.get_double(key);
  }
  return r;
}

RunReport read_report(const fs::path& run_directory) {
  const auto path = run_directory / "report.txt";
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::InputError, "no report.txt in " + run_directory.string() + "; is this a run directory?");
  std::ostringstream text;
  text << in.rdbuf();
  try {
    auto r = RunReport::parse(text.str());
    r.run_directory = run_directory;
    return r;
  } catch (const Error& e) {
    fail(ErrorKind::InputError, path.string() + " is malformed: " + e.what());
  }
}

Image downscale(const Image& image, int divisor) {
  if (divisor != 1 && divisor != 2 && divisor != 4) fail(ErrorKind::InvalidArgument, "divisor must be 1, 2 or 4");
  if (divisor == 1) return image;
  const int w = image.width() / divisor;
  const int h = image.height() / divisor;
  const int n = divisor * divisor;
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int sum[3] = {0, 0, 0};
      for (int dy = 0; dy < divisor; ++dy) {
        for (int dx = 0; dx < divisor; ++dx) {
          const auto* p = image.pixel(x * divisor + dx, y * divisor + dy);
          sum[0] += p[0];
          sum[1] += p[1];
          sum[2] += p[2];
        }
      }
      out.set(x, y,
              {static_cast<std::uint8_t>((sum[0] + n / 2) / n), static_cast<std::uint8_t>((sum[1] + n / 2) / n),
               static_cast<std::uint8_t>((sum[2] + n / 2) / n)});
    }
  }
  return out;
}

std::vector<std::pair<int, fs::path>> list_frames(const fs::path& directory) {
  std::error_code ec;
  if (!fs::is_directory(directory, ec)) fail(ErrorKind::InputError, directory.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(directory, ec)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  if (files.empty()) fail(ErrorKind::InputError, "no *.png frames in " + directory.string());
  std::sort(files.begin(), files.end());

  std::vector<std::pair<int, fs::path>> out;
  bool numbered = true;
  for (const auto& f : files) {
    const auto stem = f.stem().string();
    auto i = stem.size();
    while (i > 0 && std::isdigit(static_cast<unsigned char>(stem[i - 1]))) --i;
    if (i == stem.size() || stem.size() - i > 9) {
      numbered = false;
      break;
    }
    out.emplace_back(std::stoi(stem.substr(i)), f);
  }
  if (numbered) {
    std::sort(out.begin(), out.end());
    for (std::size_t k = 1; k < out.size(); ++k) {
      if (out[k].first == out[k - 1].first) numbered = false;
    }
  }
  if (!numbered) {
    out.clear();
    for (std::size_t k = 0; k < files.size(); ++k) out.emplace_back(static_cast<int>(k), files[k]);
  }
  return out;
}

namespace {

struct MosaicJob {
  Keyframe keyframe;
  Plane plane;
  std::vector<Vec3> support;
  bool new_segment = false;
};

struct ProjectionJob {
  Keyframe keyframe;
  Plane plane;
  int segment_id = 0;
};

}  // namespace

struct Pipeline::Impl {
  RunConfig config;
  RunOptions options;
  std::unique_ptr<StreamHub> own_hub;
  StreamHub* hub = nullptr;
  std::unique_ptr<StreamServer> server;

  std::atomic<bool> stop{false};
  std::atomic<bool> running{false};
  std::mutex control_mutex;
  std::condition_variable control_cv;
  bool restart_requested = false;

  std::mutex failure_mutex;
  std::string failure;

  Impl(RunConfig c, RunOptions o, StreamHub* external) : config(std::move(c)), options(o) {
    config.validate();
    if (external) {
      hub = external;
    } else {
      own_hub = std::make_unique<StreamHub>(config.stream);
      hub = own_hub.get();
    }
  }

  bool interactive() const { return options.batch ? !*options.batch : config.listen.has_value(); }

  void record_failure(const std::string& what) {
    std::lock_guard lock(failure_mutex);
    if (failure.empty()) failure = what;
  }

  void start_server() {
    if (server || !config.listen) return;
    server = std::make_unique<StreamServer>(*hub, ServerOptions{*config.listen, config.web_root, {}});
    server->start();
  }

  RunReport run();
};

Pipeline::Pipeline(RunConfig config, RunOptions options, StreamHub* hub)
    : impl_(std::make_unique<Impl>(std::move(config), options, hub)) {
  impl_->hub->on_restart([impl = impl_.get()] {
    if (!impl->running) {
      impl->hub->publish(MessageKind::Alert, alert_payload("NotRunning", "no acquisition is running", false));
      return;
    }
    std::lock_guard lock(impl->control_mutex);
    impl->restart_requested = true;
    impl->control_cv.notify_all();
  });
}

Pipeline::~Pipeline() {
  impl_->hub->on_restart({});
  if (impl_->server) impl_->server->stop();
}

void Pipeline::start_server() { impl_->start_server(); }

RunReport Pipeline::run() { return impl_->run(); }

void Pipeline::request_stop() {
  impl_->stop = true;
  std::lock_guard lock(impl_->control_mutex);
  impl_->control_cv.notify_all();
}

void Pipeline::request_restart() {
  std::lock_guard lock(impl_->control_mutex);
  impl_->restart_requested = true;
  impl_->control_cv.notify_all();
}

StreamHub& Pipeline::hub() { return *impl_->hub; }

std::optional<unsigned short> Pipeline::port() const {
  if (!impl_->server) return std::nullopt;
  return impl_->server->port();
}

bool Pipeline::interactive() const { return impl_->interactive(); }

RunReport Pipeline::Impl::run() {
  const auto frames = list_frames(config.images);
  CameraModel camera;
  try {
    camera = load_camera(config.camera).downscaled(config.divisor);
  } catch (const Error& e) {
    fail(ErrorKind::InputError, "camera file " + config.camera.string() + ": " + e.what());
  }

  std::shared_ptr<const ReplayPoses> replay;
  std::map<int, double> replay_times;
  if (config.input_mode == InputMode::ReplayWithTrajectory) {
    try {
      replay = std::make_shared<ReplayPoses>(ReplayPoses::load(config.trajectory));
    } catch (const Error& e) {
      fail(ErrorKind::InputError, "trajectory " + config.trajectory.string() + ": " + e.what());
    }
    for (const auto& [id, path] : frames) {
      if (!replay->contains(id)) {
        fail(ErrorKind::InputError, "frame " + std::to_string(id) + " (" + path.filename().string() +
                                        ") has no pose in " + config.trajectory.string());
      }
    }
    for (const auto& e : replay->entries()) replay_times[e.id] = e.timestamp;
  }
  std::vector<AhrsSample> ahrs;
  if (config.plane_source == PlaneSource::Ahrs) {
    try {
      ahrs = read_ahrs(config.ahrs);
    } catch (const Error& e) {
      fail(ErrorKind::InputError, "ahrs " + config.ahrs.string() + ": " + e.what());
    }
    if (ahrs.empty()) fail(ErrorKind::InputError, config.ahrs.string() + " holds no samples");
  }
  {
    Image first;
    try {
      first = downscale(read_png(frames.front().second), config.divisor);
    } catch (const Error& e) {
      fail(ErrorKind::InputError, e.what());
    }
    if (first.width() != camera.width || first.height() != camera.height) {
      fail(ErrorKind::InputError, frames.front().second.string() + " is " + std::to_string(first.width()) + "x" +
                                      std::to_string(first.height()) + " after downscaling but the camera expects " +
                                      std::to_string(camera.width) + "x" + std::to_string(camera.height));
    }
  }

  // Run directory named after the local start time.
  fs::path run_dir;
  {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    localtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
    std::error_code ec;
    fs::create_directories(config.output, ec);
    run_dir = config.output / stamp;
    for (int k = 2; fs::exists(run_dir); ++k) run_dir = config.output / (std::string(stamp) + "-" + std::to_string(k));
    fs::create_directories(run_dir / "segments", ec);
    if (config.write_tiles) fs::create_directories(run_dir / "tiles", ec);
    if (ec) fail(ErrorKind::IoFailure, "cannot create " + run_dir.string() + ": " + ec.message());
  }
  start_server();
  if (server) server->set_run_root(run_dir);

  stop = false;
  running = true;
  {
    std::lock_guard lock(failure_mutex);
    failure.clear();
  }
  const bool interactive_mode = interactive();
  const auto t_start = SteadyClock::now();

  BoundedQueue<Frame> frame_queue(config.queue_capacity);
  BoundedQueue<Keyframe> plane_queue(config.queue_capacity);
  BoundedQueue<MosaicJob> mosaic_queue(config.queue_capacity);
  BoundedQueue<ProjectionJob> projection_queue(config.queue_capacity);
  auto abort_all = [&] {
    frame_queue.close();
    plane_queue.close();
    mosaic_queue.close();
    projection_queue.close();
  };

  std::vector<double> acquisition_ms, pose_ms, plane_ms, mosaic_ms, projection_ms;

  std::thread acquisition([&] {
    try {
      for (std::size_t i = 0; i < frames.size() && !stop; ++i) {
        if (!options.fast) {
          std::this_thread::sleep_until(t_start + std::chrono::duration_cast<SteadyClock::duration>(
                                                      std::chrono::duration<double>(static_cast<double>(i) / config.fps)));
        }
        const auto t0 = SteadyClock::now();
        Frame f;
        f.id = frames[i].first;
        f.timestamp = replay ? replay_times.at(f.id) : static_cast<double>(i) / config.fps;
        f.image = downscale(read_png(frames[i].second), config.divisor);
        if (f.image.width() != camera.width || f.image.height() != camera.height) {
          fail(ErrorKind::InputError, frames[i].second.string() + " does not match the camera size");
        }
        acquisition_ms.push_back(seconds_since(t0) * 1e3);
        if (!frame_queue.push(std::move(f))) break;
      }
    } catch (const std::exception& e) {
      record_failure(std::string("acquisition: ") + e.what());
      stop = true;
      abort_all();
    }
    frame_queue.close();
  });

  // Pose stage bookkeeping, read after join.
  std::map<int, FrameStatus> statuses;
  std::vector<TrajectoryEntry> keyframe_log;
  int restarts = 0;
  bool lost_for_good = false;

  std::thread pose_stage([&] {
    try {
      PoseEngine engine(camera, config.engine, replay);
      std::vector<int> pending;
      auto refresh_pending = [&] {
        std::erase_if(pending, [&](int id) {
          const auto s = engine.status(id);
          statuses[id] = s;
          return s != FrameStatus::Pending;
        });
      };
      auto do_restart = [&] {
        engine.restart();
        pending.clear();
        ++restarts;
        hub->publish(MessageKind::RestartAck, restart_ack_payload(engine.session()));
      };
      auto forward = [&](std::vector<Keyframe>& kfs) {
        for (auto& kf : kfs) {
          keyframe_log.push_back({kf.frame_id, kf.timestamp, kf.pose});
          std::vector<CloudPoint> sparse;
          sparse.reserve(kf.local_points.size());
          for (const auto& p : kf.local_points) sparse.push_back({p, {255, 170, 0}});
          hub->publish(MessageKind::SparsePoints, sparse_points_payload(sparse));
          if (!plane_queue.push(std::move(kf))) return;
        }
      };

      while (!stop) {
        {
          std::unique_lock lock(control_mutex);
          if (restart_requested) {
            restart_requested = false;
            lock.unlock();
            do_restart();
          }
        }
        auto frame = frame_queue.pop();
        if (!frame || stop) break;
        const auto t0 = SteadyClock::now();
        auto step = engine.process(*frame);
        pose_ms.push_back(seconds_since(t0) * 1e3);
        statuses[step.frame_id] = step.status;
        if (step.status == FrameStatus::Pending) pending.push_back(step.frame_id);
        refresh_pending();
        if (step.pose) {
          hub->publish(MessageKind::Pose, pose_payload(step.frame_id, *step.pose, engine.session()));
        }
        forward(step.keyframes);

        if (step.failure) {
          hub->publish(MessageKind::Alert, alert_payload(to_string(step.failure->kind()),
                                                         "frame " + std::to_string(step.frame_id) + ": " +
                                                             step.failure->what(),
                                                         !interactive_mode));
          if (!interactive_mode) {
            record_failure(step.failure->what());
            lost_for_good = true;
            stop = true;
            frame_queue.close();
            break;
          }
          // Ingestion halts here; the full frame queue holds the acquisition back.
          std::unique_lock lock(control_mutex);
          control_cv.wait(lock, [&] { return restart_requested || stop; });
          if (stop) break;
          restart_requested = false;
          lock.unlock();
          do_restart();
        }
      }
      if (!lost_for_good && engine.state() != EngineState::Lost) {
        auto rest = engine.finish();
        forward(rest);
        refresh_pending();
      }
      for (int id : pending) statuses[id] = engine.status(id);
    } catch (const std::exception& e) {
      record_failure(std::string("pose estimation: ") + e.what());
      stop = true;
      frame_queue.close();
    }
    // Unblocks acquisition when this stage leaves early.
    frame_queue.close();
    plane_queue.close();
  });

  int nonplanar = 0;
  std::thread plane_stage([&] {
    try {
      std::optional<Plane> current;
      while (auto kf = plane_queue.pop()) {
        const auto t0 = SteadyClock::now();
        auto done = [&] { plane_ms.push_back(seconds_since(t0) * 1e3); };
        const auto& pts = kf->local_points;
        if (pts.size() < 3) {
          ++nonplanar;
          done();
          continue;
        }
        std::vector<double> dist;
        dist.reserve(pts.size());
        for (const auto& p : pts) dist.push_back((p - kf->pose.center()).norm());
        std::nth_element(dist.begin(), dist.begin() + static_cast<long>(dist.size() / 2), dist.end());
        const double scale = dist[dist.size() / 2];
        const double threshold = config.ransac_threshold * scale;

        PlaneFitResult fit;
        try {
          if (config.plane_source == PlaneSource::Ransac) {
            PlaneFitParams params{threshold, config.ransac_iterations, default_min_inliers(pts.size()),
                                  config.seed + static_cast<std::uint64_t>(kf->frame_id)};
            fit = ransac_plane_fit(pts, params, kf->window_centers);
          } else {
            const auto* sample = nearest_ahrs(ahrs, kf->timestamp);
            fit.plane = horizontal_plane_from_ahrs(pts, gravity_in_world(kf->pose, *sample));
            if (fit.plane.signed_distance(kf->pose.center()) < 0) fit.plane = {-fit.plane.normal, -fit.plane.offset};
            auto& r = fit.report;
            r.total_count = static_cast<int>(pts.size());
            r.normal = fit.plane.normal;
            double ss = 0.0;
            Vec3 sum = Vec3::Zero();
            for (std::size_t i = 0; i < pts.size(); ++i) {
              const double d = fit.plane.signed_distance(pts[i]);
              if (std::abs(d) > threshold) continue;
              r.inliers.push_back(static_cast<int>(i));
              ss += d * d;
              sum += pts[i];
            }
            r.inlier_count = static_cast<int>(r.inliers.size());
            if (r.inlier_count > 0) {
              r.rms_residual = std::sqrt(ss / r.inlier_count);
              r.centroid = sum / r.inlier_count;
            }
          }
        } catch (const Error&) {
          ++nonplanar;
          done();
          continue;
        }
        // Scene scale: median camera-to-plane distance over the window.
        std::vector<double> heights;
        for (const auto& c : kf->window_centers) heights.push_back(std::abs(fit.plane.signed_distance(c)));
        if (heights.empty()) heights.push_back(std::abs(fit.plane.signed_distance(kf->pose.center())));
        std::nth_element(heights.begin(), heights.begin() + static_cast<long>(heights.size() / 2), heights.end());
        const double scene_scale = heights[heights.size() / 2];
        if (planarity_check(fit.report, scene_scale, config.planarity) == Planarity::SkipProjection) {
          ++nonplanar;
          done();
          continue;
        }
        MosaicJob job;
        job.new_segment = !current || segment_reinit_check(*current, fit, scene_scale, config.reinit) ==
                                          SegmentDecision::Reinitialize;
        if (job.new_segment) current = fit.plane;
        job.plane = *current;
        for (int i : fit.report.inliers) job.support.push_back(pts[static_cast<std::size_t>(i)]);
        job.keyframe = std::move(*kf);
        done();
        if (!mosaic_queue.push(std::move(job))) break;
      }
    } catch (const std::exception& e) {
      record_failure(std::string("plane fitting: ") + e.what());
      stop = true;
      abort_all();
    }
    mosaic_queue.close();
  });

  int segments = 0;
  std::vector<std::string> segment_entries;
  std::thread mosaic_stage([&] {
    try {
      std::optional<MosaicSegment> seg;
      int next_id = 0;
      auto segment_event = [&](const char* what, int frame_id, const std::string& image) {
        MosaicEvent e;
        e.event = what;
        e.segment_id = seg->id();
        e.frame_id = frame_id;
        e.gsd = seg->gsd();
        e.canvas_width = seg->canvas().width();
        e.canvas_height = seg->canvas().height();
        const Vec2 o = seg->canvas_origin();
        e.origin_a = o.x();
        e.origin_b = o.y();
        e.image = image;
        const auto wf = seg->world_file();
        e.world_file = {wf.a, wf.d, wf.b, wf.e, wf.c, wf.f};
        hub->publish(MessageKind::MosaicEvent, mosaic_event_payload(e));
      };
      auto close_segment = [&] {
        if (!seg) return;
        if (!seg->empty()) {
          write_segment(run_dir / "segments", *seg);
          segment_entries.push_back(segment_manifest_entry(*seg));
          segment_event("segment_closed", -1, format_name("segments/segment_%03d.png", seg->id()));
        }
        seg.reset();
      };
      auto open_segment = [&](const PlaneFrame& frame, double gsd) {
        seg.emplace(next_id++, frame, gsd, config.blend, config.max_canvas_side);
        ++segments;
        segment_event("segment_started", -1, format_name("segments/segment_%03d.png", seg->id()));
      };

      while (auto job = mosaic_queue.pop()) {
        const auto t0 = SteadyClock::now();
        const auto& kf = job->keyframe;
        if (job->new_segment || !seg) {
          close_segment();
          const PlaneFrame frame = build_plane_frame(job->plane, job->support, Vec3::UnitX());
          const double gsd = config.gsd > 0 ? config.gsd : ground_sample_distance(kf.pose, camera, job->plane);
          open_segment(frame, gsd);
        }
        std::optional<Tile> tile;
        try {
          const auto h = plane_to_image_homography(kf.pose, camera, seg->plane_frame());
          tile = rectify_image(kf.image, h, camera, seg->gsd(), {std::min(8192, config.max_canvas_side)});
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::EmptyFootprint && e.kind() != ErrorKind::CameraOnPlane) throw;
        }
        if (tile) {
          if (!seg->fits(*tile)) {
            const PlaneFrame frame = seg->plane_frame();
            const double gsd = seg->gsd();
            close_segment();
            open_segment(frame, gsd);
          }
          seg->composite(*tile, kf.frame_id);
          std::string tile_name;
          if (config.write_tiles) {
            const auto stem = format_name("frame_%06d", kf.frame_id);
            write_tile(run_dir / "tiles", stem, *tile);
            tile_name = "tiles/" + stem + ".png";
          }
          segment_event("tile_added", kf.frame_id, tile_name);
        }
        const int segment_id = seg->id();
        mosaic_ms.push_back(seconds_since(t0) * 1e3);
        if (!projection_queue.push({std::move(job->keyframe), job->plane, segment_id})) break;
      }
      close_segment();
    } catch (const std::exception& e) {
      record_failure(std::string("mosaicking: ") + e.what());
      stop = true;
      abort_all();
    }
    projection_queue.close();
  });

  CloudStore store;
  std::vector<double> chunk_times;
  std::thread projection_stage([&] {
    try {
      while (auto job = projection_queue.pop()) {
        const auto t0 = SteadyClock::now();
        const auto& kf = job->keyframe;
        try {
          auto chunk = project_image_plane(kf.image, kf.pose, camera, job->plane, config.grid, kf.frame_id,
                                           job->segment_id);
          hub->publish(MessageKind::CloudChunk, cloud_chunk_payload(chunk));
          store.accumulate(std::move(chunk));
          chunk_times.push_back(seconds_since(t_start));
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::EmptyChunk && e.kind() != ErrorKind::CameraOnPlane) throw;
        }
        projection_ms.push_back(seconds_since(t0) * 1e3);
      }
    } catch (const std::exception& e) {
      record_failure(std::string("projection: ") + e.what());
      stop = true;
      abort_all();
    }
  });

  acquisition.join();
  pose_stage.join();
  plane_stage.join();
  mosaic_stage.join();
  projection_stage.join();
  running = false;

  RunReport report;
  report.run_directory = run_dir;
  report.wall_seconds = seconds_since(t_start);
  report.frames_processed = static_cast<int>(statuses.size());
  for (const auto& [id, s] : statuses) {
    if (s == FrameStatus::Tracked) ++report.frames_tracked;
    if (s == FrameStatus::Lost) ++report.frames_lost;
    if (s == FrameStatus::Pending) ++report.frames_pending;
  }
  report.keyframes = static_cast<int>(keyframe_log.size());
  report.restarts = restarts;
  report.nonplanar_skipped = nonplanar;
  report.segments = segments;
  report.chunks = static_cast<int>(store.chunks().size());
  report.points = store.point_count();
  if (report.wall_seconds > 0) report.pose_rate_hz = report.frames_tracked / report.wall_seconds;
  if (chunk_times.size() >= 2 && chunk_times.back() > chunk_times.front()) {
    report.cloud_rate_hz = static_cast<double>(chunk_times.size() - 1) / (chunk_times.back() - chunk_times.front());
  }
  report.stages["acquisition"] = summarize(acquisition_ms);
  report.stages["pose"] = summarize(pose_ms);
  report.stages["plane"] = summarize(plane_ms);
  report.stages["mosaic"] = summarize(mosaic_ms);
  report.stages["projection"] = summarize(projection_ms);
  {
    std::lock_guard lock(failure_mutex);
    report.failure = failure;
  }
  if (!report.failure.empty()) {
    report.status = "failed";
  } else if (stop) {
    report.status = "interrupted";
  }

  if (store.point_count() > 0) export_ply(store, run_dir / "cloud.ply");
  write_trajectory(run_dir / "keyframes.txt", keyframe_log);
  std::string manifest;
  manifest += "camera = " + fs::absolute(config.camera).string() + "\n";
  manifest += "images = " + fs::absolute(config.images).string() + "\n";
  manifest += "divisor = " + std::to_string(config.divisor) + "\n";
  manifest += "keyframes = keyframes.txt\n";
  manifest += "cloud = " + std::string(store.point_count() > 0 ? "cloud.ply" : "") + "\n";
  manifest += "segments = " + std::to_string(segment_entries.size()) + "\n";
  manifest += "segment_index = segments/segments.txt\n";
  std::string index;
  for (const auto& entry : segment_entries) index += entry;
  write_text_file(run_dir / "segments" / "segments.txt", index);
  write_text_file(run_dir / "manifest.txt", manifest);
  write_text_file(run_dir / "report.txt", report.to_text());
  return report;
}

}  // namespace seqmosaic
