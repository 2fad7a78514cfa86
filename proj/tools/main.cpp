#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <thread>

#include <CLI11.hpp>

#include "seqmosaic/error.hpp"
#include "seqmosaic/pipeline.hpp"
#include "seqmosaic/synthetic_scene.hpp"

namespace fs = std::filesystem;
using namespace seqmosaic;

namespace {

// SIGINT/SIGTERM are blocked everywhere and collected by one thread.
sigset_t termination_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  return set;
}

void print_summary(const RunReport& r) {
  std::printf("run directory   %s\n", r.run_directory.string().c_str());
  std::printf("status          %s%s%s\n", r.status.c_str(), r.failure.empty() ? "" : ": ", r.failure.c_str());
  std::printf("frames          %d processed, %d tracked, %d lost, %d pending\n", r.frames_processed, r.frames_tracked,
              r.frames_lost, r.frames_pending);
  std::printf("keyframes       %d (%d skipped as non-planar)\n", r.keyframes, r.nonplanar_skipped);
  std::printf("segments        %d\n", r.segments);
  std::printf("cloud           %d chunks, %zu points\n", r.chunks, r.points);
  std::printf("rates           pose %.3f Hz, cloud %.3f Hz over %.1f s\n", r.pose_rate_hz, r.cloud_rate_hz,
              r.wall_seconds);
  for (const auto& [name, t] : r.stages) {
    std::printf("stage %-10s n=%zu p50 %.1f ms, p90 %.1f ms, max %.1f ms\n", name.c_str(), t.samples, t.p50_ms,
                t.p90_ms, t.max_ms);
  }
}

int exit_code(const RunReport& r) {
  if (r.status == "completed") return 0;
  if (r.status == "interrupted") return 130;
  return 3;
}

int cmd_run(const fs::path& config_path, bool fast, bool batch, const std::string& listen) {
  RunConfig config = load_run_config(config_path);
  if (!listen.empty()) config.listen = parse_listen_address(listen);

  RunOptions options;
  options.fast = fast;
  if (batch) options.batch = true;
  Pipeline pipeline(config, options);

  std::atomic<bool> signalled{false};
  std::thread([&pipeline, &signalled] {
    const sigset_t set = termination_signals();
    int sig = 0;
    sigwait(&set, &sig);
    signalled = true;
    pipeline.request_stop();
  }).detach();

  pipeline.start_server();
  if (auto port = pipeline.port()) {
    std::printf("streaming on %s:%u\n", config.listen->host.c_str(), static_cast<unsigned>(*port));
    std::fflush(stdout);
  }
  const RunReport report = pipeline.run();
  print_summary(report);
  if (pipeline.port() && pipeline.interactive() && !signalled) {
    std::printf("run finished; still serving, press Ctrl-C to exit\n");
    std::fflush(stdout);
    while (!signalled) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  return exit_code(report);
}

int cmd_synth(const fs::path& scene, const fs::path& out) {
  const SynthSpec spec = load_synth_spec(scene);
  const SyntheticDataset data = render_sequence(spec.scene, spec.trajectory, spec.camera, spec.seed);
  write_dataset(data, out);
  std::ofstream cfg(out / "pipeline.cfg");
  cfg << "camera = camera.txt\n"
      << "images = images\n"
      << "input_mode = replay_with_trajectory\n"
      << "trajectory = trajectory.txt\n"
      << "ahrs = ahrs.txt\n"
      << "fps = " << spec.trajectory.frame_rate << "\n"
      << "output = runs\n";
  if (!cfg) fail(ErrorKind::IoFailure, "cannot write " + (out / "pipeline.cfg").string());
  std::printf("wrote %zu frames and %zu ground-truth planes to %s\n", data.images.size(), data.planes.size(),
              out.string().c_str());
  return 0;
}

int cmd_report(const fs::path& run_dir) {
  print_summary(read_report(run_dir));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  const sigset_t set = termination_signals();
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  CLI::App app{"Real-time planar mosaicking and point-cloud projection for image sequences"};
  app.require_subcommand(1);

  fs::path config_path;
  bool fast = false;
  bool batch = false;
  std::string listen;
  auto* run = app.add_subcommand("run", "Process a dataset described by a config file");
  run->add_option("--config", config_path, "key = value run configuration")->required()->check(CLI::ExistingFile);
  run->add_flag("--fast", fast, "Do not pace frames to the acquisition rate");
  run->add_flag("--batch", batch, "Terminate on tracking failure instead of waiting for a restart");
  run->add_option("--listen", listen, "Stream service address, host:port (port 0 picks one)");

  fs::path scene;
  fs::path out;
  auto* synth = app.add_subcommand("synth", "Render a synthetic dataset with ground truth");
  synth->add_option("--scene", scene, "Scene description file")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out, "Output directory")->required();

  fs::path run_dir;
  auto* report = app.add_subcommand("report", "Summarize a finished run");
  report->add_option("run-dir", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path, fast, batch, listen);
    if (*synth) return cmd_synth(scene, out);
    if (*report) return cmd_report(run_dir);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.kind() == ErrorKind::ConfigError ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
