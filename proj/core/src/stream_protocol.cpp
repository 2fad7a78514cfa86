#include "seqmosaic/stream_protocol.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include <boost/beast/core/detail/base64.hpp>

#include "seqmosaic/error.hpp"

namespace seqmosaic {

using nlohmann::json;

namespace {

constexpr std::size_t kPointBytes = 27;

struct KindName {
  MessageKind kind;
  std::string_view name;
};

constexpr KindName kKinds[] = {
    {MessageKind::Pose, "pose"},
    {MessageKind::SparsePoints, "sparse_points"},
    {MessageKind::CloudChunk, "cloud_chunk"},
    {MessageKind::MosaicEvent, "mosaic_event"},
    {MessageKind::Alert, "alert"},
    {MessageKind::RestartAck, "restart_ack"},
};

[[noreturn]] void bad(const std::string& what) { fail(ErrorKind::ParseError, what); }

void require(const json& j, const char* key, json::value_t type) {
  if (!j.contains(key)) bad(std::string("payload lacks '") + key + "'");
  const auto t = j.at(key).type();
  const bool numeric = type == json::value_t::number_float &&
                       (t == json::value_t::number_integer || t == json::value_t::number_unsigned);
  const bool integral = type == json::value_t::number_integer && t == json::value_t::number_unsigned;
  if (t != type && !numeric && !integral) bad(std::string("payload field '") + key + "' has the wrong type");
}

void require_numbers(const json& j, const char* key, std::size_t n) {
  require(j, key, json::value_t::array);
  const auto& a = j.at(key);
  if (a.size() != n) bad(std::string("payload field '") + key + "' needs " + std::to_string(n) + " numbers");
  for (const auto& v : a) {
    if (!v.is_number()) bad(std::string("payload field '") + key + "' must hold numbers");
  }
}

json vec(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace

std::string_view to_string(MessageKind kind) {
  for (const auto& k : kKinds) {
    if (k.kind == kind) return k.name;
  }
  return "unknown";
}

std::optional<MessageKind> message_kind_from_string(std::string_view name) {
  for (const auto& k : kKinds) {
    if (k.name == name) return k.kind;
  }
  return std::nullopt;
}

bool is_lossless(MessageKind kind) {
  return kind == MessageKind::CloudChunk || kind == MessageKind::MosaicEvent || kind == MessageKind::Alert ||
         kind == MessageKind::RestartAck;
}

std::string encode_message(const StreamMessage& m) {
  json j;
  j["v"] = kProtocolVersion;
  j["kind"] = std::string(to_string(m.kind));
  j["sequence"] = m.sequence;
  j["timestamp"] = m.timestamp;
  j["payload"] = m.payload;
  return j.dump();
}

StreamMessage decode_message(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    bad(std::string("malformed message: ") + e.what());
  }
  if (!j.is_object()) bad("message must be a JSON object");
  require(j, "v", json::value_t::number_integer);
  if (j.at("v").get<int>() != kProtocolVersion) bad("unsupported protocol version " + j.at("v").dump());
  require(j, "kind", json::value_t::string);
  require(j, "sequence", json::value_t::number_integer);
  require(j, "timestamp", json::value_t::number_float);
  require(j, "payload", json::value_t::object);
  const auto kind = message_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) bad("unknown message kind '" + j.at("kind").get<std::string>() + "'");
  StreamMessage m;
  m.kind = *kind;
  m.sequence = j.at("sequence").get<std::uint64_t>();
  m.timestamp = j.at("timestamp").get<double>();
  m.payload = j.at("payload");
  validate_payload(m.kind, m.payload);
  return m;
}

void validate_payload(MessageKind kind, const json& p) {
  using vt = json::value_t;
  switch (kind) {
    case MessageKind::Pose:
      require(p, "frame_id", vt::number_integer);
      require(p, "session", vt::number_integer);
      require_numbers(p, "rotation", 9);
      require_numbers(p, "center", 3);
      break;
    case MessageKind::SparsePoints:
    case MessageKind::CloudChunk:
      require(p, "count", vt::number_integer);
      require(p, "encoding", vt::string);
      require(p, "data", vt::string);
      if (p.at("encoding") != "xyz_f64le_rgb_u8") bad("unknown point encoding");
      if (kind == MessageKind::CloudChunk) {
        require(p, "frame_id", vt::number_integer);
        require(p, "segment_id", vt::number_integer);
        require(p, "plane", vt::object);
        require_numbers(p.at("plane"), "normal", 3);
        require(p.at("plane"), "offset", vt::number_float);
      }
      if (payload_points(p).size() != p.at("count").get<std::size_t>()) bad("point count does not match data");
      break;
    case MessageKind::MosaicEvent:
      require(p, "event", vt::string);
      require(p, "segment_id", vt::number_integer);
      require(p, "frame_id", vt::number_integer);
      require(p, "gsd", vt::number_float);
      require(p, "canvas", vt::object);
      require(p.at("canvas"), "width", vt::number_integer);
      require(p.at("canvas"), "height", vt::number_integer);
      require_numbers(p.at("canvas"), "origin", 2);
      require(p, "image", vt::string);
      require_numbers(p, "world_file", 6);
      break;
    case MessageKind::Alert:
      require(p, "code", vt::string);
      require(p, "message", vt::string);
      require(p, "terminal", vt::boolean);
      break;
    case MessageKind::RestartAck:
      require(p, "session", vt::number_integer);
      break;
  }
}

json pose_payload(int frame_id, const Pose& pose, int session) {
  json rotation = json::array();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) rotation.push_back(pose.rotation()(i, j));
  }
  return {{"frame_id", frame_id}, {"session", session}, {"rotation", rotation}, {"center", vec(pose.center())}};
}

json sparse_points_payload(std::span<const CloudPoint> points) {
  return {{"count", points.size()}, {"encoding", "xyz_f64le_rgb_u8"}, {"data", base64_encode(pack_points(points))}};
}

json cloud_chunk_payload(const CloudChunk& chunk) {
  json p = sparse_points_payload(chunk.points);
  p["frame_id"] = chunk.frame_id;
  p["segment_id"] = chunk.segment_id;
  p["plane"] = {{"normal", vec(chunk.plane.normal)}, {"offset", chunk.plane.offset}};
  return p;
}

json mosaic_event_payload(const MosaicEvent& e) {
  return {{"event", e.event},
          {"segment_id", e.segment_id},
          {"frame_id", e.frame_id},
          {"gsd", e.gsd},
          {"canvas", {{"width", e.canvas_width}, {"height", e.canvas_height}, {"origin", {e.origin_a, e.origin_b}}}},
          {"image", e.image},
          {"world_file", e.world_file}};
}

json alert_payload(std::string_view code, std::string_view message, bool terminal) {
  return {{"code", code}, {"message", message}, {"terminal", terminal}};
}

json restart_ack_payload(int session) { return {{"session", session}}; }

std::string pack_points(std::span<const CloudPoint> points) {
  std::string out(points.size() * kPointBytes, '\0');
  char* dst = out.data();
  for (const auto& p : points) {
    for (int i = 0; i < 3; ++i) {
      auto bits = std::bit_cast<std::uint64_t>(p.position[i]);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      std::memcpy(dst, &bits, 8);
      dst += 8;
    }
    *dst++ = static_cast<char>(p.color.r);
    *dst++ = static_cast<char>(p.color.g);
    *dst++ = static_cast<char>(p.color.b);
  }
  return out;
}

std::vector<CloudPoint> unpack_points(std::string_view bytes) {
  if (bytes.size() % kPointBytes != 0) bad("point data is not a whole number of records");
  std::vector<CloudPoint> out(bytes.size() / kPointBytes);
  const char* src = bytes.data();
  for (auto& p : out) {
    for (int i = 0; i < 3; ++i) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, src, 8);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      p.position[i] = std::bit_cast<double>(bits);
      src += 8;
    }
    p.color = {static_cast<std::uint8_t>(src[0]), static_cast<std::uint8_t>(src[1]), static_cast<std::uint8_t>(src[2])};
    src += 3;
  }
  return out;
}

std::string base64_encode(std::string_view bytes) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

std::string base64_decode(std::string_view text) {
  namespace b64 = boost::beast::detail::base64;
  if (text.size() % 4 != 0) bad("base64 length is not a multiple of 4");
  std::size_t pad = 0;
  while (pad < 2 && pad < text.size() && text[text.size() - 1 - pad] == '=') ++pad;
  const std::string_view body = text.substr(0, text.size() - pad);
  std::string out(b64::decoded_size(text.size()), '\0');
  const auto [written, read] = b64::decode(out.data(), body.data(), body.size());
  if (read != body.size()) bad("invalid base64 data");
  out.resize(written);
  return out;
}

std::vector<CloudPoint> payload_points(const json& payload) {
  return unpack_points(base64_decode(payload.at("data").get<std::string>()));
}

void RateBudget::validate() const {
  if (!(pose_hz > 0) || !(cloud_hz > 0) || !(video_hz > 0)) {
    fail(ErrorKind::ConfigError, "stream rates must be positive");
  }
}

ClientCommand parse_command(std::string_view text, const RateBudget& current) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error&) {
    fail(ErrorKind::UnknownCommand, "command is not valid JSON");
  }
  if (!j.is_object() || !j.contains("command") || !j.at("command").is_string()) {
    fail(ErrorKind::UnknownCommand, "command object needs a 'command' string");
  }
  const auto name = j.at("command").get<std::string>();
  ClientCommand c;
  c.rates = current;
  if (name == "restart_acquisition") {
    c.kind = CommandKind::RestartAcquisition;
  } else if (name == "snapshot_request") {
    c.kind = CommandKind::SnapshotRequest;
  } else if (name == "set_rate") {
    c.kind = CommandKind::SetRate;
    for (const auto& [key, field] : {std::pair{"pose_hz", &RateBudget::pose_hz},
                                     std::pair{"cloud_hz", &RateBudget::cloud_hz},
                                     std::pair{"video_hz", &RateBudget::video_hz}}) {
      if (!j.contains(key)) continue;
      if (!j.at(key).is_number() || !(j.at(key).get<double>() > 0)) {
        fail(ErrorKind::UnknownCommand, std::string("set_rate needs a positive '") + key + "'");
      }
      c.rates.*field = j.at(key).get<double>();
    }
  } else {
    fail(ErrorKind::UnknownCommand, "unknown command '" + name + "'");
  }
  return c;
}

}  // namespace seqmosaic
