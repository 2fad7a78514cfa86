#include <fstream>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <gtest/gtest.h>

#include "seqmosaic/error.hpp"
#include "seqmosaic/stream_server.hpp"
#include "test_support.hpp"

using namespace seqmosaic;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = boost::asio::ip::tcp;

namespace {

struct Fixture {
  std::filesystem::path web;
  std::filesystem::path run;
  StreamHub hub;
  std::unique_ptr<StreamServer> server;

  explicit Fixture(const std::string& name) {
    const auto root = testkit::scratch_dir(name);
    web = root / "web";
    run = root / "run";
    std::filesystem::create_directories(web / "assets");
    std::filesystem::create_directories(run / "segments");
    std::ofstream(web / "index.html") << "<html>viewer</html>";
    std::ofstream(web / "assets" / "app.js") << "console.log(1);";
    std::ofstream(run / "segments" / "segment_000.pgw") << "0.01\n";
    std::ofstream(root / "secret.txt") << "secret";
    server = std::make_unique<StreamServer>(hub, ServerOptions{{"127.0.0.1", 0}, web, run});
    server->start();
  }
};

http::response<http::string_body> get(unsigned short port, const std::string& target) {
  boost::asio::io_context ioc;
  tcp::socket socket(ioc);
  socket.connect(tcp::endpoint(boost::asio::ip::make_address("127.0.0.1"), port));
  http::request<http::string_body> req{http::verb::get, target, 11};
  req.set(http::field::host, "localhost");
  http::write(socket, req);
  beast::flat_buffer buffer;
  http::response<http::string_body> res;
  http::read(socket, buffer, res);
  return res;
}

class WsClient {
 public:
  explicit WsClient(unsigned short port) : ws_(ioc_) {
    ws_.next_layer().connect(tcp::endpoint(boost::asio::ip::make_address("127.0.0.1"), port));
    ws_.handshake("localhost", "/stream");
  }
  void send(const std::string& text) { ws_.write(boost::asio::buffer(text)); }
  StreamMessage receive() {
    beast::flat_buffer buffer;
    ws_.read(buffer);
    return decode_message(beast::buffers_to_string(buffer.data()));
  }
  void close() { ws_.close(websocket::close_code::normal); }

 private:
  boost::asio::io_context ioc_;
  websocket::stream<tcp::socket> ws_;
};

}  // namespace

TEST(ListenAddress, Parse) {
  const auto a = parse_listen_address("0.0.0.0:8080");
  EXPECT_EQ(a.host, "0.0.0.0");
  EXPECT_EQ(a.port, 8080);
  const auto b = parse_listen_address(":9000");
  EXPECT_EQ(b.host, "127.0.0.1");
  EXPECT_EQ(b.port, 9000);
  for (const char* bad : {"localhost", "host:", "host:99999", "host:12ab"}) {
    try {
      parse_listen_address(bad);
      ADD_FAILURE() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::ConfigError);
    }
  }
}

TEST(StaticPath, ResolvesInsideRootOnly) {
  Fixture f("static_path");
  f.server->stop();
  EXPECT_EQ(resolve_static_path(f.web, "/"), std::filesystem::canonical(f.web / "index.html"));
  EXPECT_EQ(resolve_static_path(f.web, "/assets/app.js?v=3"), std::filesystem::canonical(f.web / "assets/app.js"));
  EXPECT_FALSE(resolve_static_path(f.web, "/../secret.txt"));
  EXPECT_FALSE(resolve_static_path(f.web, "/assets/../../secret.txt"));
  EXPECT_FALSE(resolve_static_path(f.web, "/..\\secret.txt"));
  EXPECT_FALSE(resolve_static_path(f.web, "relative"));
  EXPECT_FALSE(resolve_static_path(f.web, "/missing.js"));
  std::filesystem::create_symlink(f.web.parent_path() / "secret.txt", f.web / "link.txt");
  EXPECT_FALSE(resolve_static_path(f.web, "/link.txt"));
  EXPECT_EQ(mime_type("a/b.js"), "application/javascript");
  EXPECT_EQ(mime_type("x.png"), "image/png");
}

TEST(StreamServer, ServesStaticFiles) {
  Fixture f("server_http");
  auto res = get(f.server->port(), "/");
  EXPECT_EQ(res.result(), http::status::ok);
  EXPECT_EQ(res.body(), "<html>viewer</html>");
  EXPECT_EQ(res[http::field::content_type], "text/html");
  res = get(f.server->port(), "/run/segments/segment_000.pgw");
  EXPECT_EQ(res.result(), http::status::ok);
  EXPECT_EQ(res.body(), "0.01\n");
  EXPECT_EQ(get(f.server->port(), "/../secret.txt").result(), http::status::not_found);
  EXPECT_EQ(get(f.server->port(), "/run/../../secret.txt").result(), http::status::not_found);
  EXPECT_EQ(get(f.server->port(), "/nothing").result(), http::status::not_found);
}

TEST(StreamServer, WebSocketSnapshotAndLiveTraffic) {
  Fixture f("server_ws");
  f.hub.publish(MessageKind::Pose, pose_payload(4, Pose(), 0));
  CloudChunk chunk;
  chunk.frame_id = 4;
  chunk.points = {{Vec3(1, 2, 3), {4, 5, 6}}};
  f.hub.publish(MessageKind::CloudChunk, cloud_chunk_payload(chunk));

  WsClient client(f.server->port());
  client.send(R"({"command":"snapshot_request"})");
  const auto a = client.receive();
  const auto b = client.receive();
  EXPECT_EQ(a.kind, MessageKind::Pose);
  EXPECT_EQ(a.sequence, 1u);
  EXPECT_EQ(b.kind, MessageKind::CloudChunk);
  EXPECT_EQ(b.sequence, 2u);
  EXPECT_EQ(payload_points(b.payload)[0].position, Vec3(1, 2, 3));

  f.hub.publish(MessageKind::Alert, alert_payload("TrackingLost", "x", false));
  const auto c = client.receive();
  EXPECT_EQ(c.kind, MessageKind::Alert);
  EXPECT_EQ(c.sequence, 3u);

  client.send("nonsense");
  const auto d = client.receive();
  EXPECT_EQ(d.payload.at("code"), "UnknownCommand");
  EXPECT_EQ(f.hub.client_count(), 1u);
  client.close();
}

TEST(StreamServer, BindFailureIsIoFailure) {
  Fixture f("server_bind");
  StreamHub other;
  StreamServer second(other, ServerOptions{{"127.0.0.1", f.server->port()}, f.web, f.run});
  try {
    second.start();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::IoFailure);
  }
}
