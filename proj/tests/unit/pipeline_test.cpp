#include <chrono>
#include <fstream>
#include <thread>

#include <gtest/gtest.h>

#include "seqmosaic/error.hpp"
#include "seqmosaic/image_io.hpp"
#include "seqmosaic/pipeline.hpp"
#include "test_support.hpp"

using namespace seqmosaic;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::InvalidArgument;
}

RunConfig config_from(const std::string& text) { return run_config_from_key_values(KeyValueFile::parse(text), "/base"); }

const std::string kMinimal = "camera = cam.txt\nimages = imgs\n";

fs::path flat_dataset(const std::string& name, double extent = 3.0) {
  SceneSpec scene;
  scene.extent_x = extent;
  return testkit::write_synthetic_dataset(testkit::scratch_dir(name), scene, {}, testkit::small_camera(2), 4);
}

// Visual odometry over the images, with frame 6 replaced by a featureless one.
fs::path blank_frame_dataset(const std::string& name) {
  SceneSpec scene;
  scene.extent_x = 3.5;
  const auto cam = testkit::small_camera(2);
  const auto dir = testkit::write_synthetic_dataset(testkit::scratch_dir(name), scene, {}, cam, 4);
  write_png(dir / "images" / "frame_000006.png", Image(cam.width, cam.height, Rgb{90, 90, 90}));
  std::ofstream(dir / "pipeline.cfg") << "camera = camera.txt\nimages = images\noutput = runs\n";
  return dir;
}

}  // namespace

TEST(RunConfig, ParsesKeysAndResolvesPaths) {
  const auto c = config_from(kMinimal + "divisor = 2\nblend = feather\nlisten = :0\npose_hz = 2\nwindow_size = 3\n");
  EXPECT_EQ(c.camera, fs::path("/base/cam.txt"));
  EXPECT_EQ(c.images, fs::path("/base/imgs"));
  EXPECT_EQ(c.divisor, 2);
  EXPECT_EQ(c.blend, BlendRule::Feather);
  ASSERT_TRUE(c.listen);
  EXPECT_EQ(c.stream.rates.pose_hz, 2.0);
  EXPECT_EQ(c.engine.window_size, 3);
  EXPECT_EQ(c.input_mode, InputMode::ImageDirectory);
}

TEST(RunConfig, Errors) {
  for (const std::string bad : {std::string("images = x\n"), kMinimal + "divisor = 3\n", kMinimal + "window_size = 4\n",
                                kMinimal + "colour = blue\n", kMinimal + "blend = smudge\n", kMinimal + "fps = 0\n",
                                kMinimal + "input_mode = replay_with_trajectory\n", kMinimal + "plane_source = ahrs\n",
                                kMinimal + "divisor = two\n", kMinimal + "listen = nowhere\n",
                                kMinimal + "gsd = -1\n", kMinimal + "pose_hz = 0\n"}) {
    EXPECT_EQ(kind_of([&] { config_from(bad); }), ErrorKind::ConfigError) << bad;
  }
}

TEST(ListFrames, IdsFromTrailingDigits) {
  const auto dir = testkit::scratch_dir("list_frames");
  const Image img(2, 2);
  for (const char* f : {"f_0010.png", "f_0003.png", "notes.txt"}) {
    if (fs::path(f).extension() == ".png") write_png(dir / f, img);
    else std::ofstream(dir / f) << "x";
  }
  const auto frames = list_frames(dir);
  ASSERT_EQ(frames.size(), 2u);
  EXPECT_EQ(frames[0].first, 3);
  EXPECT_EQ(frames[1].first, 10);
  write_png(dir / "cover.png", img);
  const auto positional = list_frames(dir);
  ASSERT_EQ(positional.size(), 3u);
  EXPECT_EQ(positional[0].first, 0);
  EXPECT_EQ(positional[2].first, 2);
  EXPECT_EQ(positional[0].second.filename(), "cover.png");
  EXPECT_EQ(kind_of([] { list_frames(testkit::scratch_dir("list_empty")); }), ErrorKind::InputError);
  EXPECT_EQ(kind_of([] { list_frames("/nonexistent/frames"); }), ErrorKind::InputError);
}

TEST(Downscale, Examples) {
  const Image same(5, 4, Rgb{1, 2, 3});
  EXPECT_EQ(downscale(same, 1), same);
  const Image big(1936, 1456, Rgb{200, 100, 50});
  const Image small = downscale(big, 2);
  EXPECT_EQ(small.width(), 968);
  EXPECT_EQ(small.height(), 728);
  EXPECT_EQ(small.at(500, 300), (Rgb{200, 100, 50}));
  Image checker(4, 2);
  checker.set(0, 0, {10, 0, 0});
  checker.set(1, 0, {20, 0, 0});
  checker.set(0, 1, {30, 0, 0});
  checker.set(1, 1, {41, 0, 0});
  EXPECT_EQ(downscale(checker, 2).at(0, 0).r, 25);  // (101 + 2) / 4
  EXPECT_EQ(downscale(Image(7, 5), 4).width(), 1);
}

TEST(RunReport, TextRoundTrip) {
  RunReport r;
  r.status = "failed";
  r.failure = "TrackingLost: frame 9";
  r.frames_processed = 20;
  r.frames_tracked = 9;
  r.frames_lost = 11;
  r.keyframes = 7;
  r.segments = 1;
  r.chunks = 7;
  r.points = 105000;
  r.wall_seconds = 12.5;
  r.stages["pose"] = {9, 120.0, 250.0, 300.0};
  const auto back = RunReport::parse(r.to_text());
  EXPECT_EQ(back.status, r.status);
  EXPECT_EQ(back.failure, r.failure);
  EXPECT_EQ(back.frames_lost, 11);
  EXPECT_EQ(back.points, 105000u);
  EXPECT_EQ(back.stages.at("pose").samples, 9u);
  EXPECT_EQ(back.stages.at("pose").p90_ms, 250.0);
  EXPECT_EQ(kind_of([] { read_report("/nonexistent/run"); }), ErrorKind::InputError);
}

TEST(Pipeline, EmptyImageDirectoryIsInputError) {
  const auto dir = flat_dataset("pipeline_empty_images", 0.5);
  fs::remove_all(dir / "images");
  fs::create_directories(dir / "images");
  Pipeline p(load_run_config(dir / "pipeline.cfg"), {true, true});
  EXPECT_EQ(kind_of([&] { p.run(); }), ErrorKind::InputError);
}

TEST(Pipeline, ReplayRunProducesConsistentOutputs) {
  const auto dir = flat_dataset("pipeline_replay");
  Pipeline p(load_run_config(dir / "pipeline.cfg"), {true, true});
  const auto report = p.run();
  ASSERT_EQ(report.status, "completed") << report.failure;
  EXPECT_EQ(report.frames_processed, 13);
  EXPECT_EQ(report.frames_tracked, 13);
  EXPECT_EQ(report.frames_lost, 0);
  EXPECT_EQ(report.frames_pending, 0);
  EXPECT_EQ(report.keyframes, 13);
  EXPECT_EQ(report.chunks + report.nonplanar_skipped, report.keyframes);
  EXPECT_EQ(report.segments, 1);
  const auto run = report.run_directory;
  const auto ply = testkit::read_ply(run / "cloud.ply");
  EXPECT_EQ(ply.vertex_count, report.points);
  for (const auto& pt : ply.points) EXPECT_LT(std::abs(pt.position.z()), 0.01);
  EXPECT_TRUE(fs::exists(run / "segments" / "segment_000.png"));
  EXPECT_TRUE(fs::exists(run / "segments" / "segment_000.pgw"));
  EXPECT_TRUE(fs::exists(run / "tiles" / "frame_000000.pgw"));
  EXPECT_EQ(read_trajectory(run / "keyframes.txt").size(), 13u);
  const auto on_disk = read_report(run);
  EXPECT_EQ(on_disk.points, report.points);
  EXPECT_EQ(on_disk.stages.at("projection").samples, static_cast<std::size_t>(report.chunks));
  EXPECT_NEAR(report.pose_rate_hz, report.frames_tracked / report.wall_seconds, 1e-9);
}

TEST(Pipeline, RunsAreDeterministic) {
  const auto dir = flat_dataset("pipeline_determinism", 2.0);
  const auto a = Pipeline(load_run_config(dir / "pipeline.cfg"), {true, true}).run();
  const auto b = Pipeline(load_run_config(dir / "pipeline.cfg"), {true, true}).run();
  ASSERT_EQ(a.status, "completed");
  ASSERT_EQ(b.status, "completed");
  ASSERT_NE(a.run_directory, b.run_directory);
  EXPECT_EQ(testkit::read_file(a.run_directory / "cloud.ply"), testkit::read_file(b.run_directory / "cloud.ply"));
  EXPECT_EQ(testkit::read_file(a.run_directory / "segments" / "segment_000.pgw"),
            testkit::read_file(b.run_directory / "segments" / "segment_000.pgw"));
  EXPECT_EQ(testkit::read_file(a.run_directory / "segments" / "segment_000.png"),
            testkit::read_file(b.run_directory / "segments" / "segment_000.png"));
}

TEST(Pipeline, StreamsProductsToHub) {
  const auto dir = flat_dataset("pipeline_stream", 1.5);
  StreamHub hub;
  const auto client = hub.connect();
  Pipeline p(load_run_config(dir / "pipeline.cfg"), {true, true}, &hub);
  const auto report = p.run();
  ASSERT_EQ(report.status, "completed");
  hub.snapshot(client);
  int chunks = 0, events = 0, poses = 0;
  for (const auto& f : hub.drain(client)) {
    const auto m = decode_message(f);
    chunks += m.kind == MessageKind::CloudChunk;
    events += m.kind == MessageKind::MosaicEvent;
    poses += m.kind == MessageKind::Pose;
  }
  EXPECT_EQ(chunks, report.chunks);
  EXPECT_GE(events, report.chunks + 2);  // tiles plus segment start and close
  EXPECT_EQ(poses, 1);
}

TEST(Pipeline, BatchFailureTerminates) {
  const auto dir = blank_frame_dataset("pipeline_batch_fail");
  Pipeline p(load_run_config(dir / "pipeline.cfg"), {true, true});
  const auto report = p.run();
  EXPECT_EQ(report.status, "failed");
  EXPECT_NE(report.failure.find("TrackingLost"), std::string::npos) << report.failure;
  EXPECT_LT(report.frames_processed, 15);
  EXPECT_EQ(read_report(report.run_directory).status, "failed");
}

TEST(Pipeline, InteractiveRestartAfterTrackingLoss) {
  const auto dir = blank_frame_dataset("pipeline_restart");
  StreamHub hub;
  const auto client = hub.connect();
  Pipeline p(load_run_config(dir / "pipeline.cfg"), {true, false}, &hub);
  RunReport report;
  std::thread runner([&] { report = p.run(); });
  bool alerted = false, acked = false;
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(120);
  while (!acked && std::chrono::steady_clock::now() < deadline) {
    for (const auto& f : hub.drain(client)) {
      const auto m = decode_message(f);
      if (m.kind == MessageKind::Alert && m.payload.at("code") == "TrackingLost") {
        EXPECT_EQ(m.payload.at("terminal"), false);
        alerted = true;
        hub.handle_command(client, R"({"command":"restart_acquisition"})");
      }
      if (m.kind == MessageKind::RestartAck) {
        EXPECT_EQ(m.payload.at("session"), 1);
        acked = true;
      }
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  if (!acked) p.request_stop();
  runner.join();
  EXPECT_TRUE(alerted);
  EXPECT_TRUE(acked);
  EXPECT_EQ(report.status, "completed") << report.failure;
  EXPECT_EQ(report.restarts, 1);
  EXPECT_GE(report.frames_lost, 1);
  EXPECT_EQ(report.frames_processed, 15);
  EXPECT_GT(report.chunks, 0);
}

TEST(Pipeline, RestartWhenIdleIsRejected) {
  StreamHub hub;
  const auto client = hub.connect();
  const auto dir = flat_dataset("pipeline_idle", 0.5);
  Pipeline p(load_run_config(dir / "pipeline.cfg"), {true, true}, &hub);
  hub.handle_command(client, R"({"command":"restart_acquisition"})");
  const auto got = hub.drain(client);
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(decode_message(got[0]).payload.at("code"), "NotRunning");
}
