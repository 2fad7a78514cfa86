#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "seqmosaic/stream_hub.hpp"

namespace seqmosaic {

struct ListenAddress {
  std::string host = "127.0.0.1";
  unsigned short port = 0;  // 0 picks a free port
};

/// "host:port" or ":port". Throws ConfigError.
ListenAddress parse_listen_address(std::string_view text);

struct ServerOptions {
  ListenAddress listen;
  std::filesystem::path web_root;  // viewer assets, served from /
  std::filesystem::path run_root;  // run products, served from /run/
};

/// WebSocket + static HTTP front end for a StreamHub on one I/O thread.
/// Any upgrade request becomes a stream client; plain GETs are answered
/// from the web or run root. The hub must outlive the server.
class StreamServer {
 public:
  StreamServer(StreamHub& hub, ServerOptions options);
  ~StreamServer();
  StreamServer(const StreamServer&) = delete;
  StreamServer& operator=(const StreamServer&) = delete;

  /// Binds and starts serving. Throws IoFailure when the address is taken.
  void start();
  void stop();
  unsigned short port() const;
  void set_run_root(const std::filesystem::path& root);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Resolves a request target against a root. Empty when the target escapes
/// the root or names nothing.
std::optional<std::filesystem::path> resolve_static_path(const std::filesystem::path& root, std::string_view target);
std::string_view mime_type(const std::filesystem::path& path);

}  // namespace seqmosaic
