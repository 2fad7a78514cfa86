#include "seqmosaic/stream_hub.hpp"

#include <algorithm>
#include <chrono>

#include "seqmosaic/error.hpp"

namespace seqmosaic {

namespace {

double steady_seconds() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

bool gate_open(const std::optional<double>& last, double hz, double t) {
  return !last || t >= *last + 1.0 / hz;
}

std::size_t chunk_points(const StreamMessage& m) {
  return m.kind == MessageKind::CloudChunk ? m.payload.at("count").get<std::size_t>() : 0;
}

}  // namespace

StreamHub::StreamHub(HubOptions options, Clock clock)
    : options_(options), clock_(clock ? std::move(clock) : Clock(steady_seconds)) {
  options_.rates.validate();
  if (options_.client_queue_bound == 0) fail(ErrorKind::ConfigError, "client queue bound must be positive");
  if (options_.point_budget < 2) fail(ErrorKind::ConfigError, "point budget must be at least 2");
}

StreamHub::Client* StreamHub::find(ClientId id) {
  auto it = clients_.find(id);
  return it == clients_.end() ? nullptr : &it->second;
}

const StreamHub::Client* StreamHub::find(ClientId id) const {
  auto it = clients_.find(id);
  return it == clients_.end() ? nullptr : &it->second;
}

ClientId StreamHub::connect(Wake wake) {
  std::lock_guard lock(mutex_);
  const ClientId id = next_id_++;
  Client& c = clients_[id];
  c.rates = options_.rates;
  c.wake = std::move(wake);
  return id;
}

void StreamHub::disconnect(ClientId client) {
  std::lock_guard lock(mutex_);
  clients_.erase(client);
}

std::size_t StreamHub::client_count() const {
  std::lock_guard lock(mutex_);
  return clients_.size();
}

bool StreamHub::enqueue_lossless(Client& c, const StreamMessage& m, bool priority) {
  if (c.overflowed) return false;
  if (c.priority.size() + c.cumulative.size() >= options_.client_queue_bound) {
    c.overflowed = true;
    c.priority.clear();
    c.cumulative.clear();
    c.released = 0;
    c.pose.reset();
    c.sparse.reset();
    StreamMessage alert{MessageKind::Alert, 0, m.timestamp,
                        alert_payload("ClientOverflow", "client fell too far behind; disconnecting", true)};
    c.priority.push_back(std::move(alert));
    return true;
  }
  (priority ? c.priority : c.cumulative).push_back(m);
  return true;
}

void StreamHub::publish(MessageKind kind, nlohmann::json payload) {
  validate_payload(kind, payload);
  std::vector<Wake> wakes;
  {
    std::lock_guard lock(mutex_);
    StreamMessage m{kind, 0, clock_(), std::move(payload)};
    switch (kind) {
      case MessageKind::Pose:
        latest_pose_ = m;
        break;
      case MessageKind::SparsePoints:
        latest_sparse_ = m;
        break;
      case MessageKind::CloudChunk:
      case MessageKind::MosaicEvent:
        retain(m);
        break;
      default:
        break;
    }
    for (auto& [id, c] : clients_) {
      if (c.overflowed) continue;
      switch (kind) {
        case MessageKind::Pose:
          c.pose = m;
          break;
        case MessageKind::SparsePoints:
          c.sparse = m;
          break;
        case MessageKind::CloudChunk:
        case MessageKind::MosaicEvent:
          enqueue_lossless(c, m, false);
          break;
        case MessageKind::Alert:
        case MessageKind::RestartAck:
          enqueue_lossless(c, m, true);
          break;
      }
      if (c.wake) wakes.push_back(c.wake);
    }
  }
  for (auto& w : wakes) w();
}

void StreamHub::send_to(ClientId client, MessageKind kind, nlohmann::json payload) {
  validate_payload(kind, payload);
  Wake wake;
  {
    std::lock_guard lock(mutex_);
    Client* c = find(client);
    if (!c) return;
    enqueue_lossless(*c, StreamMessage{kind, 0, clock_(), std::move(payload)}, true);
    wake = c->wake;
  }
  if (wake) wake();
}

void StreamHub::retain(const StreamMessage& m) {
  retained_.push_back(m);
  retained_points_ += chunk_points(m);
  if (retained_points_ > options_.point_budget) archive_oldest();
}

// Folds every retained chunk into one uniformly decimated archive chunk at
// the head of the history. Mosaic events keep their relative order.
void StreamHub::archive_oldest() {
  std::vector<CloudPoint> points;
  std::optional<StreamMessage> first;
  std::deque<StreamMessage> rest;
  for (auto& m : retained_) {
    if (m.kind != MessageKind::CloudChunk) {
      rest.push_back(std::move(m));
      continue;
    }
    if (!first) first = m;
    auto p = payload_points(m.payload);
    points.insert(points.end(), p.begin(), p.end());
  }
  const std::size_t target = options_.point_budget / 2;
  const std::size_t stride = (points.size() + target - 1) / target;
  std::vector<CloudPoint> kept;
  kept.reserve(points.size() / stride + 1);
  for (std::size_t i = 0; i < points.size(); i += stride) kept.push_back(points[i]);

  StreamMessage archive = *first;
  archive.payload = sparse_points_payload(kept);
  archive.payload["frame_id"] = -1;
  archive.payload["segment_id"] = first->payload.at("segment_id");
  archive.payload["plane"] = first->payload.at("plane");
  archive.payload["archive"] = true;
  rest.push_front(std::move(archive));
  retained_ = std::move(rest);
  retained_points_ = kept.size();
}

void StreamHub::release_due(Client& c, double t) {
  if (c.released < c.cumulative.size() && gate_open(c.last_release, c.rates.cloud_hz, t)) {
    c.released = c.cumulative.size();
    c.last_release = t;
  }
}

std::string StreamHub::hand_out(Client& c, StreamMessage m) {
  m.sequence = ++c.sequence;
  return encode_message(m);
}

std::optional<std::string> StreamHub::next(ClientId client) {
  std::lock_guard lock(mutex_);
  Client* c = find(client);
  if (!c || c->closed) return std::nullopt;
  const double t = clock_();
  if (!c->priority.empty()) {
    StreamMessage m = std::move(c->priority.front());
    c->priority.pop_front();
    if (c->overflowed && c->priority.empty()) c->closed = true;
    return hand_out(*c, std::move(m));
  }
  if (c->overflowed) return std::nullopt;
  if (c->pose && gate_open(c->last_pose, c->rates.pose_hz, t)) {
    c->last_pose = t;
    StreamMessage m = std::move(*c->pose);
    c->pose.reset();
    return hand_out(*c, std::move(m));
  }
  if (c->sparse && gate_open(c->last_sparse, c->rates.cloud_hz, t)) {
    c->last_sparse = t;
    StreamMessage m = std::move(*c->sparse);
    c->sparse.reset();
    return hand_out(*c, std::move(m));
  }
  release_due(*c, t);
  if (c->released > 0) {
    StreamMessage m = std::move(c->cumulative.front());
    c->cumulative.pop_front();
    --c->released;
    return hand_out(*c, std::move(m));
  }
  return std::nullopt;
}

std::vector<std::string> StreamHub::drain(ClientId client) {
  std::vector<std::string> out;
  while (auto frame = next(client)) out.push_back(std::move(*frame));
  return out;
}

std::optional<double> StreamHub::next_due(ClientId client) const {
  std::lock_guard lock(mutex_);
  const Client* c = find(client);
  if (!c || c->overflowed) return std::nullopt;
  std::optional<double> due;
  auto consider = [&](double t) { due = due ? std::min(*due, t) : t; };
  if (c->pose && c->last_pose) consider(*c->last_pose + 1.0 / c->rates.pose_hz);
  if (c->sparse && c->last_sparse) consider(*c->last_sparse + 1.0 / c->rates.cloud_hz);
  if (c->released < c->cumulative.size() && c->last_release) consider(*c->last_release + 1.0 / c->rates.cloud_hz);
  return due;
}

bool StreamHub::closed(ClientId client) const {
  std::lock_guard lock(mutex_);
  const Client* c = find(client);
  return !c || c->closed;
}

void StreamHub::set_rate(ClientId client, const RateBudget& rates) {
  rates.validate();
  Wake wake;
  {
    std::lock_guard lock(mutex_);
    Client* c = find(client);
    if (!c) return;
    c->rates = rates;
    wake = c->wake;
  }
  if (wake) wake();
}

void StreamHub::snapshot(ClientId client) {
  Wake wake;
  {
    std::lock_guard lock(mutex_);
    Client* c = find(client);
    if (!c || c->overflowed) return;
    c->cumulative.clear();
    c->released = 0;
    for (const auto& m : retained_) {
      if (!enqueue_lossless(*c, m, false)) break;
    }
    if (!c->overflowed) {
      c->released = c->cumulative.size();
      c->last_release = clock_();
      c->pose = latest_pose_;
      c->last_pose.reset();
      c->sparse = latest_sparse_;
      c->last_sparse.reset();
    }
    wake = c->wake;
  }
  if (wake) wake();
}

void StreamHub::handle_command(ClientId client, std::string_view text) {
  ClientCommand command;
  try {
    RateBudget current;
    {
      std::lock_guard lock(mutex_);
      const Client* c = find(client);
      if (!c) return;
      current = c->rates;
    }
    command = parse_command(text, current);
  } catch (const Error& e) {
    send_to(client, MessageKind::Alert, alert_payload("UnknownCommand", e.what(), false));
    return;
  }
  switch (command.kind) {
    case CommandKind::SetRate:
      set_rate(client, command.rates);
      break;
    case CommandKind::SnapshotRequest:
      snapshot(client);
      break;
    case CommandKind::RestartAcquisition: {
      RestartHandler handler;
      {
        std::lock_guard lock(mutex_);
        handler = restart_;
      }
      if (handler) {
        handler();
      } else {
        send_to(client, MessageKind::Alert, alert_payload("UnknownCommand", "no acquisition to restart", false));
      }
      break;
    }
  }
}

void StreamHub::on_restart(RestartHandler handler) {
  std::lock_guard lock(mutex_);
  restart_ = std::move(handler);
}

std::vector<StreamMessage> StreamHub::retained() const {
  std::lock_guard lock(mutex_);
  return {retained_.begin(), retained_.end()};
}

std::size_t StreamHub::retained_points() const {
  std::lock_guard lock(mutex_);
  return retained_points_;
}

std::optional<StreamMessage> StreamHub::latest(MessageKind kind) const {
  std::lock_guard lock(mutex_);
  if (kind == MessageKind::Pose) return latest_pose_;
  if (kind == MessageKind::SparsePoints) return latest_sparse_;
  return std::nullopt;
}

}  // namespace seqmosaic
