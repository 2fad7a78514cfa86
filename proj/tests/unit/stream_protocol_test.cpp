#include <gtest/gtest.h>

#include "seqmosaic/error.hpp"
#include "seqmosaic/stream_protocol.hpp"
#include "test_support.hpp"

using namespace seqmosaic;

namespace {

std::string golden(const std::string& kind) {
  std::string text = testkit::read_file(testkit::golden_dir() / ("transcript_" + kind + ".json"));
  while (!text.empty() && text.back() == '\n') text.pop_back();
  return text;
}

StreamMessage message(MessageKind kind, std::uint64_t seq, double ts, nlohmann::json payload) {
  return {kind, seq, ts, std::move(payload)};
}

std::vector<std::pair<std::string, StreamMessage>> transcript() {
  Mat3 r;
  r << 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0;
  const std::vector<CloudPoint> sparse{{Vec3(1, 2, 3), {255, 170, 0}}, {Vec3(-0.5, 0.25, 0), {1, 2, 3}}};
  CloudChunk chunk;
  chunk.frame_id = 3;
  chunk.segment_id = 1;
  chunk.plane = {Vec3(0, 0, 1), -0.5};
  chunk.points = {{Vec3(0.125, 0.5, -0.5), {10, 20, 30}}};
  MosaicEvent ev;
  ev.event = "tile_added";
  ev.segment_id = 0;
  ev.frame_id = 4;
  ev.gsd = 0.005;
  ev.canvas_width = 640;
  ev.canvas_height = 480;
  ev.origin_a = -0.6;
  ev.origin_b = 0.185;
  ev.image = "tiles/frame_000004.png";
  ev.world_file = {0.005, 0.0, 0.0, -0.005, -0.6, 0.185};
  return {
      {"pose", message(MessageKind::Pose, 7, 24.5, pose_payload(12, Pose(r, Vec3(1.5, -0.25, 2.0)), 0))},
      {"sparse_points", message(MessageKind::SparsePoints, 8, 26.0, sparse_points_payload(sparse))},
      {"cloud_chunk", message(MessageKind::CloudChunk, 9, 28.0, cloud_chunk_payload(chunk))},
      {"mosaic_event", message(MessageKind::MosaicEvent, 10, 28.0, mosaic_event_payload(ev))},
      {"alert", message(MessageKind::Alert, 11, 30.0, alert_payload("TrackingLost", "frame 9: 3 tie points", false))},
      {"restart_ack", message(MessageKind::RestartAck, 12, 31.5, restart_ack_payload(2))},
  };
}

ErrorKind kind_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::InvalidArgument;
}

}  // namespace

TEST(StreamProtocol, GoldenTranscriptsEncodeByteExact) {
  for (const auto& [name, m] : transcript()) EXPECT_EQ(encode_message(m), golden(name)) << name;
}

TEST(StreamProtocol, GoldenTranscriptsDecode) {
  for (const auto& [name, m] : transcript()) {
    const auto decoded = decode_message(golden(name));
    EXPECT_EQ(decoded, m) << name;
    EXPECT_EQ(encode_message(decoded), golden(name)) << name;
  }
}

TEST(StreamProtocol, KindNames) {
  for (auto k : {MessageKind::Pose, MessageKind::SparsePoints, MessageKind::CloudChunk, MessageKind::MosaicEvent,
                 MessageKind::Alert, MessageKind::RestartAck}) {
    EXPECT_EQ(message_kind_from_string(to_string(k)), k);
  }
  EXPECT_FALSE(message_kind_from_string("video"));
  EXPECT_FALSE(is_lossless(MessageKind::Pose));
  EXPECT_FALSE(is_lossless(MessageKind::SparsePoints));
  EXPECT_TRUE(is_lossless(MessageKind::CloudChunk));
  EXPECT_TRUE(is_lossless(MessageKind::Alert));
}

TEST(StreamProtocol, DecodeRejectsBadMessages) {
  EXPECT_EQ(kind_of([] { decode_message("{not json"); }), ErrorKind::ParseError);
  EXPECT_EQ(kind_of([] { decode_message("[]"); }), ErrorKind::ParseError);
  std::string v2 = golden("restart_ack");
  v2.replace(v2.find("\"v\":1"), 5, "\"v\":2");
  EXPECT_EQ(kind_of([&] { decode_message(v2); }), ErrorKind::ParseError);
  EXPECT_EQ(kind_of([] { decode_message(R"({"kind":"video","payload":{},"sequence":1,"timestamp":0.0,"v":1})"); }),
            ErrorKind::ParseError);
  EXPECT_EQ(kind_of([] { decode_message(R"({"kind":"alert","payload":{"code":"x"},"sequence":1,"timestamp":0.0,"v":1})"); }),
            ErrorKind::ParseError);
  // count disagrees with the data
  std::string chunk = golden("cloud_chunk");
  chunk.replace(chunk.find("\"count\":1"), 9, "\"count\":2");
  EXPECT_EQ(kind_of([&] { decode_message(chunk); }), ErrorKind::ParseError);
}

TEST(Base64, KnownVectors) {
  const std::vector<std::pair<std::string, std::string>> v{
      {"", ""}, {"f", "Zg=="}, {"fo", "Zm8="}, {"foo", "Zm9v"}, {"Man", "TWFu"}, {"foobar", "Zm9vYmFy"}};
  for (const auto& [raw, enc] : v) {
    EXPECT_EQ(base64_encode(raw), enc);
    EXPECT_EQ(base64_decode(enc), raw);
  }
  EXPECT_EQ(kind_of([] { base64_decode("abc"); }), ErrorKind::ParseError);
  EXPECT_EQ(kind_of([] { base64_decode("ab$="); }), ErrorKind::ParseError);
}

TEST(PackPoints, ByteLayout) {
  const std::vector<CloudPoint> p{{Vec3(1.0, -2.0, 0.5), {7, 8, 9}}};
  const std::string bytes = pack_points(p);
  ASSERT_EQ(bytes.size(), 27u);
  // 1.0 = 0x3FF0000000000000, -2.0 = 0xC000000000000000, 0.5 = 0x3FE0000000000000, little endian.
  const unsigned char expected[27] = {0, 0, 0, 0, 0, 0, 0xF0, 0x3F, 0, 0, 0, 0, 0, 0, 0, 0xC0,
                                      0, 0, 0, 0, 0, 0, 0xE0, 0x3F, 7, 8, 9};
  for (int i = 0; i < 27; ++i) EXPECT_EQ(static_cast<unsigned char>(bytes[i]), expected[i]) << i;
  const auto back = unpack_points(bytes);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].position, p[0].position);
  EXPECT_EQ(back[0].color, p[0].color);
  EXPECT_EQ(kind_of([&] { unpack_points(bytes.substr(1)); }), ErrorKind::ParseError);
}

TEST(Commands, Parse) {
  const RateBudget current;
  EXPECT_EQ(parse_command(R"({"command":"restart_acquisition"})", current).kind, CommandKind::RestartAcquisition);
  EXPECT_EQ(parse_command(R"({"command":"snapshot_request"})", current).kind, CommandKind::SnapshotRequest);
  const auto c = parse_command(R"({"command":"set_rate","pose_hz":2})", current);
  EXPECT_EQ(c.kind, CommandKind::SetRate);
  EXPECT_EQ(c.rates.pose_hz, 2.0);
  EXPECT_EQ(c.rates.cloud_hz, current.cloud_hz);
  for (const char* bad : {"", "{", "[]", R"({"cmd":"x"})", R"({"command":"reboot"})", R"({"command":5})",
                          R"({"command":"set_rate","pose_hz":0})", R"({"command":"set_rate","cloud_hz":"fast"})"}) {
    EXPECT_EQ(kind_of([&] { parse_command(bad, current); }), ErrorKind::UnknownCommand) << bad;
  }
}

TEST(RateBudget, Validate) {
  RateBudget r;
  EXPECT_NO_THROW(r.validate());
  r.cloud_hz = 0;
  EXPECT_EQ(kind_of([&] { r.validate(); }), ErrorKind::ConfigError);
}
