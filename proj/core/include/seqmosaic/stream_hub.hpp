#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "seqmosaic/stream_protocol.hpp"

namespace seqmosaic {

struct HubOptions {
  RateBudget rates;
  std::size_t client_queue_bound = 4096;  // undelivered lossless messages per client
  std::size_t point_budget = 5'000'000;   // retained cloud points before archiving
};

using ClientId = std::uint64_t;

/// Fan-out of pipeline products to connected clients.
///
/// Poses and sparse points are latest-wins slots released at pose_hz and
/// cloud_hz. Chunks and mosaic events share a lossless FIFO that is released
/// in batches at cloud_hz. Alerts and restart acknowledgements jump the
/// queue. Sequence numbers are assigned when a message is handed out, so
/// they are strictly increasing per client. Publishing never blocks on a
/// client: a client whose backlog exceeds the bound gets a terminal
/// ClientOverflow alert and nothing after it.
class StreamHub {
 public:
  using Clock = std::function<double()>;
  using Wake = std::function<void()>;
  using RestartHandler = std::function<void()>;

  explicit StreamHub(HubOptions options = {}, Clock clock = {});

  ClientId connect(Wake wake = {});
  void disconnect(ClientId client);
  std::size_t client_count() const;

  void publish(MessageKind kind, nlohmann::json payload);
  /// Delivered to one client only, ahead of its queued traffic.
  void send_to(ClientId client, MessageKind kind, nlohmann::json payload);

  /// Next encoded frame that may be delivered now.
  std::optional<std::string> next(ClientId client);
  std::vector<std::string> drain(ClientId client);
  /// Earliest clock time at which a held-back message becomes deliverable.
  std::optional<double> next_due(ClientId client) const;
  /// True once the terminal overflow alert has been handed out.
  bool closed(ClientId client) const;

  void set_rate(ClientId client, const RateBudget& rates);
  /// Replaces the client's undelivered cumulative traffic with every
  /// retained chunk and mosaic event, plus the latest pose and sparse points.
  void snapshot(ClientId client);
  /// Parses and applies a client command. restart_acquisition goes to the
  /// restart handler; the pipeline acknowledges it with a broadcast. Bad
  /// commands answer the sender with a non-terminal UnknownCommand alert.
  void handle_command(ClientId client, std::string_view text);
  void on_restart(RestartHandler handler);

  std::vector<StreamMessage> retained() const;
  std::size_t retained_points() const;
  std::optional<StreamMessage> latest(MessageKind kind) const;
  double now() const { return clock_(); }

 private:
  struct Client {
    RateBudget rates;
    Wake wake;
    std::uint64_t sequence = 0;
    std::deque<StreamMessage> priority;
    std::deque<StreamMessage> cumulative;
    std::size_t released = 0;  // leading cumulative entries free to go
    std::optional<StreamMessage> pose;
    std::optional<StreamMessage> sparse;
    std::optional<double> last_pose;
    std::optional<double> last_sparse;
    std::optional<double> last_release;
    bool overflowed = false;
    bool closed = false;
  };

  std::string hand_out(Client& c, StreamMessage m);
  void release_due(Client& c, double t);
  bool enqueue_lossless(Client& c, const StreamMessage& m, bool priority);
  void retain(const StreamMessage& m);
  void archive_oldest();
  Client* find(ClientId id);
  const Client* find(ClientId id) const;

  HubOptions options_;
  Clock clock_;
  mutable std::mutex mutex_;
  std::map<ClientId, Client> clients_;
  ClientId next_id_ = 1;
  std::deque<StreamMessage> retained_;
  std::size_t retained_points_ = 0;
  std::optional<StreamMessage> latest_pose_;
  std::optional<StreamMessage> latest_sparse_;
  RestartHandler restart_;
};

}  // namespace seqmosaic
