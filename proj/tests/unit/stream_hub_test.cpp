#include <memory>
#include <set>

#include <gtest/gtest.h>

#include "seqmosaic/error.hpp"
#include "seqmosaic/stream_hub.hpp"

using namespace seqmosaic;

namespace {

struct FakeClock {
  std::shared_ptr<double> t = std::make_shared<double>(0.0);
  StreamHub::Clock clock() const {
    return [t = t] { return *t; };
  }
  void set(double v) { *t = v; }
};

nlohmann::json pose_msg(int frame) { return pose_payload(frame, Pose(Mat3::Identity(), Vec3(frame, 0, 2)), 0); }

nlohmann::json chunk_msg(int frame, int points = 3) {
  CloudChunk c;
  c.frame_id = frame;
  for (int i = 0; i < points; ++i) c.points.push_back({Vec3(frame, i, 0), {1, 2, 3}});
  return cloud_chunk_payload(c);
}

nlohmann::json event_msg(int frame) {
  MosaicEvent e;
  e.event = "tile_added";
  e.frame_id = frame;
  e.gsd = 0.01;
  return mosaic_event_payload(e);
}

std::vector<StreamMessage> decode_all(const std::vector<std::string>& frames) {
  std::vector<StreamMessage> out;
  for (const auto& f : frames) out.push_back(decode_message(f));
  return out;
}

std::vector<StreamMessage> of_kind(const std::vector<StreamMessage>& msgs, MessageKind kind) {
  std::vector<StreamMessage> out;
  for (const auto& m : msgs) {
    if (m.kind == kind) out.push_back(m);
  }
  return out;
}

}  // namespace

TEST(StreamHub, PoseIsLatestWinsAtRate) {
  FakeClock clock;
  StreamHub hub({}, clock.clock());
  const auto c = hub.connect();
  std::vector<StreamMessage> got;
  for (int i = 0; i < 50; ++i) {
    clock.set(0.02 * i);
    hub.publish(MessageKind::Pose, pose_msg(i));
    for (auto& m : decode_all(hub.drain(c))) got.push_back(m);
  }
  clock.set(1.25);
  for (auto& m : decode_all(hub.drain(c))) got.push_back(m);
  EXPECT_LE(got.size(), 6u);
  ASSERT_FALSE(got.empty());
  EXPECT_EQ(got.back().payload.at("frame_id"), 49);
  EXPECT_EQ(got.front().payload.at("frame_id"), 0);
}

TEST(StreamHub, ChunksArriveInOrder) {
  FakeClock clock;
  StreamHub hub({}, clock.clock());
  const auto c = hub.connect();
  for (int i = 0; i < 3; ++i) hub.publish(MessageKind::CloudChunk, chunk_msg(i));
  const auto got = decode_all(hub.drain(c));
  ASSERT_EQ(got.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(got[i].payload.at("frame_id"), i);
    EXPECT_EQ(got[i].sequence, static_cast<std::uint64_t>(i + 1));
  }
}

TEST(StreamHub, AlertOvertakesQueuedChunks) {
  FakeClock clock;
  StreamHub hub({}, clock.clock());
  const auto c = hub.connect();
  ASSERT_FALSE(hub.next(c));  // opens the release gate
  for (int i = 0; i < 100; ++i) hub.publish(MessageKind::CloudChunk, chunk_msg(i));
  hub.publish(MessageKind::Alert, alert_payload("TrackingLost", "lost", false));
  clock.set(10.0);
  const auto got = decode_all(hub.drain(c));
  ASSERT_EQ(got.size(), 101u);
  EXPECT_EQ(got[0].kind, MessageKind::Alert);
  EXPECT_EQ(got[1].payload.at("frame_id"), 0);
}

TEST(StreamHub, CumulativeReleasedInBatchesAtCloudRate) {
  FakeClock clock;
  StreamHub hub({}, clock.clock());
  const auto c = hub.connect();
  hub.publish(MessageKind::CloudChunk, chunk_msg(0));
  EXPECT_EQ(hub.drain(c).size(), 1u);
  clock.set(0.5);
  hub.publish(MessageKind::CloudChunk, chunk_msg(1));
  hub.publish(MessageKind::MosaicEvent, event_msg(1));
  EXPECT_TRUE(hub.drain(c).empty());
  ASSERT_TRUE(hub.next_due(c));
  EXPECT_DOUBLE_EQ(*hub.next_due(c), 2.0);
  clock.set(2.0);
  EXPECT_EQ(hub.drain(c).size(), 2u);
}

TEST(StreamHub, RateComplianceOverTenSeconds) {
  FakeClock clock;
  StreamHub hub({}, clock.clock());
  const auto c = hub.connect();
  std::vector<std::pair<double, StreamMessage>> got;
  const int ticks = 1000;  // 100 Hz for 10 s
  for (int i = 0; i < ticks; ++i) {
    const double t = i / 100.0;
    clock.set(t);
    if (i % 2 == 0) hub.publish(MessageKind::Pose, pose_msg(i));
    if (i % 10 == 0) {
      hub.publish(MessageKind::CloudChunk, chunk_msg(i));
      hub.publish(MessageKind::SparsePoints, sparse_points_payload(std::vector<CloudPoint>{{Vec3(1, 1, 1), {}}}));
    }
    for (auto& m : decode_all(hub.drain(c))) got.emplace_back(t, m);
  }
  auto times = [&](MessageKind k) {
    std::vector<double> ts;
    for (const auto& [t, m] : got) {
      if (m.kind == k && (ts.empty() || ts.back() != t)) ts.push_back(t);
    }
    return ts;
  };
  const auto pose_t = times(MessageKind::Pose);
  const auto chunk_t = times(MessageKind::CloudChunk);
  const auto sparse_t = times(MessageKind::SparsePoints);
  EXPECT_LE(pose_t.size(), 50u);
  EXPECT_GE(pose_t.size(), 45u);
  EXPECT_LE(chunk_t.size(), 5u);
  EXPECT_LE(sparse_t.size(), 5u);
  for (std::size_t i = 1; i < pose_t.size(); ++i) EXPECT_GE(pose_t[i] - pose_t[i - 1], 0.2 - 1e-9);
  for (std::size_t i = 1; i < chunk_t.size(); ++i) EXPECT_GE(chunk_t[i] - chunk_t[i - 1], 2.0 - 1e-9);
  // Lossless: every chunk published before the final release is delivered.
  clock.set(100.0);
  for (auto& m : decode_all(hub.drain(c))) got.emplace_back(100.0, m);
  int chunks = 0;
  for (const auto& [t, m] : got) chunks += m.kind == MessageKind::CloudChunk;
  EXPECT_EQ(chunks, 100);
}

TEST(StreamHub, SequenceNumbersStrictlyIncreasePerClient) {
  FakeClock clock;
  StreamHub hub({}, clock.clock());
  const auto a = hub.connect();
  for (int i = 0; i < 5; ++i) hub.publish(MessageKind::CloudChunk, chunk_msg(i));
  const auto b = hub.connect();
  hub.publish(MessageKind::Pose, pose_msg(1));
  hub.publish(MessageKind::CloudChunk, chunk_msg(9));
  const auto ma = decode_all(hub.drain(a));
  const auto mb = decode_all(hub.drain(b));
  ASSERT_EQ(ma.size(), 7u);
  ASSERT_EQ(mb.size(), 2u);
  for (std::size_t i = 0; i < ma.size(); ++i) EXPECT_EQ(ma[i].sequence, i + 1);
  for (std::size_t i = 0; i < mb.size(); ++i) EXPECT_EQ(mb[i].sequence, i + 1);
}

TEST(StreamHub, LateJoinSnapshotEqualsLiveHistory) {
  FakeClock clock;
  StreamHub hub({}, clock.clock());
  const auto live = hub.connect();
  std::vector<StreamMessage> live_msgs;
  for (int i = 0; i < 30; ++i) {
    clock.set(i * 0.7);
    hub.publish(MessageKind::Pose, pose_msg(i));
    if (i % 3 == 0) {
      hub.publish(MessageKind::MosaicEvent, event_msg(i));
      hub.publish(MessageKind::CloudChunk, chunk_msg(i));
    }
    for (auto& m : decode_all(hub.drain(live))) live_msgs.push_back(m);
  }
  clock.set(1000.0);
  for (auto& m : decode_all(hub.drain(live))) live_msgs.push_back(m);

  const auto late = hub.connect();
  hub.handle_command(late, R"({"command":"snapshot_request"})");
  const auto late_msgs = decode_all(hub.drain(late));

  auto cumulative = [](const std::vector<StreamMessage>& v) {
    std::vector<nlohmann::json> out;
    for (const auto& m : v) {
      if (m.kind == MessageKind::CloudChunk || m.kind == MessageKind::MosaicEvent) out.push_back(m.payload);
    }
    return out;
  };
  EXPECT_EQ(cumulative(late_msgs), cumulative(live_msgs));
  EXPECT_EQ(cumulative(late_msgs).size(), 20u);
  const auto poses = of_kind(late_msgs, MessageKind::Pose);
  ASSERT_EQ(poses.size(), 1u);
  EXPECT_EQ(poses[0].payload.at("frame_id"), 29);
  EXPECT_EQ(poses[0].payload, of_kind(live_msgs, MessageKind::Pose).back().payload);
}

TEST(StreamHub, SnapshotOnFreshSession) {
  FakeClock clock;
  StreamHub hub({}, clock.clock());
  const auto c = hub.connect();
  hub.snapshot(c);
  EXPECT_TRUE(hub.drain(c).empty());
  hub.publish(MessageKind::Pose, pose_msg(3));
  hub.drain(c);
  const auto d = hub.connect();
  hub.snapshot(d);
  const auto got = decode_all(hub.drain(d));
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].kind, MessageKind::Pose);
  EXPECT_EQ(got[0].payload.at("frame_id"), 3);
}

TEST(StreamHub, OverflowSendsTerminalAlert) {
  FakeClock clock;
  HubOptions opts;
  opts.client_queue_bound = 10;
  StreamHub hub(opts, clock.clock());
  const auto slow = hub.connect();
  const auto fast = hub.connect();
  for (int i = 0; i < 20; ++i) {
    hub.publish(MessageKind::CloudChunk, chunk_msg(i));
    clock.set(10.0 * (i + 1));
    hub.drain(fast);
  }
  const auto first = hub.next(slow);
  ASSERT_TRUE(first);
  const auto m = decode_message(*first);
  EXPECT_EQ(m.kind, MessageKind::Alert);
  EXPECT_EQ(m.payload.at("code"), "ClientOverflow");
  EXPECT_EQ(m.payload.at("terminal"), true);
  EXPECT_TRUE(hub.closed(slow));
  hub.publish(MessageKind::Pose, pose_msg(1));
  EXPECT_FALSE(hub.next(slow));
  EXPECT_FALSE(hub.closed(fast));
  EXPECT_EQ(hub.drain(fast).size(), 1u);
}

TEST(StreamHub, MalformedCommandKeepsConnection) {
  FakeClock clock;
  StreamHub hub({}, clock.clock());
  const auto c = hub.connect();
  hub.handle_command(c, "{\"command\": \"dance\"}");
  hub.handle_command(c, "garbage");
  const auto got = decode_all(hub.drain(c));
  ASSERT_EQ(got.size(), 2u);
  for (const auto& m : got) {
    EXPECT_EQ(m.payload.at("code"), "UnknownCommand");
    EXPECT_EQ(m.payload.at("terminal"), false);
  }
  EXPECT_FALSE(hub.closed(c));
  hub.publish(MessageKind::CloudChunk, chunk_msg(1));
  EXPECT_EQ(hub.drain(c).size(), 1u);
}

TEST(StreamHub, SetRateCommand) {
  FakeClock clock;
  StreamHub hub({}, clock.clock());
  const auto c = hub.connect();
  hub.handle_command(c, R"({"command":"set_rate","pose_hz":1})");
  hub.publish(MessageKind::Pose, pose_msg(0));
  EXPECT_EQ(hub.drain(c).size(), 1u);
  clock.set(0.5);
  hub.publish(MessageKind::Pose, pose_msg(1));
  EXPECT_TRUE(hub.drain(c).empty());
  clock.set(1.0);
  EXPECT_EQ(hub.drain(c).size(), 1u);
}

TEST(StreamHub, RestartCommandReachesHandler) {
  StreamHub hub;
  const auto c = hub.connect();
  hub.handle_command(c, R"({"command":"restart_acquisition"})");
  auto got = decode_all(hub.drain(c));
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].kind, MessageKind::Alert);
  int calls = 0;
  hub.on_restart([&] {
    ++calls;
    hub.publish(MessageKind::RestartAck, restart_ack_payload(1));
  });
  hub.handle_command(c, R"({"command":"restart_acquisition"})");
  EXPECT_EQ(calls, 1);
  got = decode_all(hub.drain(c));
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].kind, MessageKind::RestartAck);
  EXPECT_EQ(got[0].payload.at("session"), 1);
}

TEST(StreamHub, SlowClientGetsEveryChunkExactlyOnceInOrder) {
  FakeClock clock;
  StreamHub hub({}, clock.clock());
  const auto c = hub.connect();
  std::vector<StreamMessage> got;
  for (int i = 0; i < 200; ++i) {
    clock.set(i * 0.3);
    hub.publish(MessageKind::CloudChunk, chunk_msg(i));
    if (i % 7 == 0) {
      if (auto f = hub.next(c)) got.push_back(decode_message(*f));
    }
  }
  clock.set(1e6);
  for (auto& m : decode_all(hub.drain(c))) got.push_back(m);
  ASSERT_EQ(got.size(), 200u);
  for (int i = 0; i < 200; ++i) {
    EXPECT_EQ(got[i].payload.at("frame_id"), i);
    EXPECT_EQ(got[i].sequence, static_cast<std::uint64_t>(i + 1));
  }
}

TEST(StreamHub, WakeCalledOnPublish) {
  StreamHub hub;
  int wakes = 0;
  hub.connect([&] { ++wakes; });
  hub.publish(MessageKind::Pose, pose_msg(0));
  hub.publish(MessageKind::CloudChunk, chunk_msg(0));
  EXPECT_EQ(wakes, 2);
}

TEST(StreamHub, RetentionArchivesPastBudget) {
  FakeClock clock;
  HubOptions opts;
  opts.point_budget = 1000;
  StreamHub hub(opts, clock.clock());
  hub.publish(MessageKind::MosaicEvent, event_msg(0));
  for (int i = 0; i < 3; ++i) hub.publish(MessageKind::CloudChunk, chunk_msg(i, 300));
  EXPECT_EQ(hub.retained_points(), 900u);
  EXPECT_EQ(hub.retained().size(), 4u);
  hub.publish(MessageKind::MosaicEvent, event_msg(3));
  hub.publish(MessageKind::CloudChunk, chunk_msg(3, 300));
  const auto r = hub.retained();
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].kind, MessageKind::CloudChunk);
  EXPECT_EQ(r[0].payload.at("archive"), true);
  EXPECT_EQ(r[0].payload.at("frame_id"), -1);
  const auto pts = payload_points(r[0].payload);
  EXPECT_LE(pts.size(), 500u);
  EXPECT_GE(pts.size(), 400u);
  EXPECT_EQ(hub.retained_points(), pts.size());
  EXPECT_EQ(r[1].payload.at("frame_id"), 0);
  EXPECT_EQ(r[2].payload.at("frame_id"), 3);
  // The archive holds points from every folded chunk.
  std::set<double> frames;
  for (const auto& p : pts) frames.insert(p.position.x());
  EXPECT_EQ(frames.size(), 4u);
}

TEST(StreamHub, RejectsInvalidPayloadsAndOptions) {
  StreamHub hub;
  EXPECT_THROW(hub.publish(MessageKind::Pose, nlohmann::json::object()), Error);
  HubOptions bad;
  bad.rates.pose_hz = 0;
  EXPECT_THROW(StreamHub{bad}, Error);
}
