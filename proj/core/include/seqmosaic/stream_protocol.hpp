#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqmosaic/camera_geometry.hpp"
#include "seqmosaic/projection_3d.hpp"

namespace seqmosaic {

inline constexpr int kProtocolVersion = 1;

enum class MessageKind { Pose, SparsePoints, CloudChunk, MosaicEvent, Alert, RestartAck };

std::string_view to_string(MessageKind kind);
std::optional<MessageKind> message_kind_from_string(std::string_view name);
/// cloud_chunk, mosaic_event, alert and restart_ack are never dropped.
bool is_lossless(MessageKind kind);

struct StreamMessage {
  MessageKind kind = MessageKind::Pose;
  std::uint64_t sequence = 0;
  double timestamp = 0.0;
  nlohmann::json payload = nlohmann::json::object();

  friend bool operator==(const StreamMessage&, const StreamMessage&) = default;
};

/// {"kind", "payload", "sequence", "timestamp", "v"}: compact, keys sorted.
std::string encode_message(const StreamMessage& message);
/// Throws ParseError on malformed JSON, a wrong version or a payload that
/// does not match its kind.
StreamMessage decode_message(std::string_view text);
void validate_payload(MessageKind kind, const nlohmann::json& payload);

nlohmann::json pose_payload(int frame_id, const Pose& pose, int session);
nlohmann::json sparse_points_payload(std::span<const CloudPoint> points);
nlohmann::json cloud_chunk_payload(const CloudChunk& chunk);

struct MosaicEvent {
  std::string event;  // segment_started, tile_added, segment_closed
  int segment_id = 0;
  int frame_id = -1;
  double gsd = 0.0;
  int canvas_width = 0;
  int canvas_height = 0;
  double origin_a = 0.0;  // plane coordinates of the top-left canvas pixel center
  double origin_b = 0.0;
  std::string image;      // run-relative path of the raster the event refers to
  std::array<double, 6> world_file{1.0, 0.0, 0.0, -1.0, 0.0, 0.0};  // A D B E C F
};
nlohmann::json mosaic_event_payload(const MosaicEvent& event);
nlohmann::json alert_payload(std::string_view code, std::string_view message, bool terminal);
nlohmann::json restart_ack_payload(int session);

/// 24 bytes of little-endian float64 xyz then 3 bytes of rgb per point.
std::string pack_points(std::span<const CloudPoint> points);
std::vector<CloudPoint> unpack_points(std::string_view bytes);
std::string base64_encode(std::string_view bytes);
/// Throws ParseError on invalid input.
std::string base64_decode(std::string_view text);
/// Points carried by a cloud_chunk or sparse_points payload.
std::vector<CloudPoint> payload_points(const nlohmann::json& payload);

struct RateBudget {
  double pose_hz = 5.0;
  double cloud_hz = 0.5;
  double video_hz = 10.0;  // reserved

  void validate() const;
};

enum class CommandKind { RestartAcquisition, SetRate, SnapshotRequest };

struct ClientCommand {
  CommandKind kind = CommandKind::SnapshotRequest;
  RateBudget rates;  // SetRate: the requested budget, unspecified fields keep `current`
};

/// {"command": "restart_acquisition" | "set_rate" | "snapshot_request", ...}.
/// Throws UnknownCommand for anything else, malformed JSON included.
ClientCommand parse_command(std::string_view text, const RateBudget& current);

}  // namespace seqmosaic
