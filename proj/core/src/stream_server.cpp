#include "seqmosaic/stream_server.hpp"

#include <atomic>
#include <charconv>
#include <chrono>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "seqmosaic/error.hpp"

namespace seqmosaic {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

ListenAddress parse_listen_address(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos) fail(ErrorKind::ConfigError, "listen address must look like host:port");
  ListenAddress out;
  if (colon > 0) out.host = std::string(text.substr(0, colon));
  const auto port = text.substr(colon + 1);
  unsigned value = 0;
  const auto [end, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
  if (ec != std::errc{} || end != port.data() + port.size() || value > 65535) {
    fail(ErrorKind::ConfigError, "bad port in listen address '" + std::string(text) + "'");
  }
  out.port = static_cast<unsigned short>(value);
  return out;
}

std::optional<std::filesystem::path> resolve_static_path(const std::filesystem::path& root, std::string_view target) {
  namespace fs = std::filesystem;
  std::string path(target.substr(0, target.find_first_of("?#")));
  if (path.empty() || path.front() != '/') return std::nullopt;
  if (path.find('\0') != std::string::npos || path.find('\\') != std::string::npos) return std::nullopt;
  const fs::path relative = fs::path(path.substr(1)).lexically_normal();
  for (const auto& part : relative) {
    if (part == "..") return std::nullopt;
  }
  std::error_code ec;
  const fs::path base = fs::weakly_canonical(root, ec);
  if (ec) return std::nullopt;
  fs::path full = fs::weakly_canonical(base / relative, ec);
  if (ec) return std::nullopt;
  if (fs::is_directory(full, ec)) full /= "index.html";
  const auto rel = full.lexically_relative(base);
  if (rel.empty() || *rel.begin() == "..") return std::nullopt;
  if (!fs::is_regular_file(full, ec)) return std::nullopt;
  return full;
}

std::string_view mime_type(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".html") return "text/html";
  if (ext == ".js" || ext == ".mjs") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".png") return "image/png";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".txt" || ext == ".pgw" || ext == ".jsonl") return "text/plain";
  return "application/octet-stream";
}

namespace {

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, StreamHub& hub) : ws_(std::move(socket)), timer_(ws_.get_executor()), hub_(hub) {}

  ~WsSession() {
    if (client_) hub_.disconnect(*client_);
  }

  void accept(http::request<http::string_body> request) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(request, [self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    std::weak_ptr<WsSession> weak = weak_from_this();
    auto executor = ws_.get_executor();
    client_ = hub_.connect([weak, executor] {
      net::post(executor, [weak] {
        if (auto s = weak.lock()) s->pump();
      });
    });
    read();
    pump();
  }

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closing_ = true;
        self->timer_.cancel();
        return;
      }
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->hub_.handle_command(*self->client_, text);
      self->pump();
      self->read();
    });
  }

  void pump() {
    if (writing_ || closing_ || !client_) return;
    if (auto frame = hub_.next(*client_)) {
      writing_ = true;
      outgoing_ = std::move(*frame);
      ws_.text(true);
      ws_.async_write(net::buffer(outgoing_), [self = shared_from_this()](beast::error_code ec, std::size_t) {
        self->writing_ = false;
        if (ec) {
          self->closing_ = true;
          return;
        }
        self->pump();
      });
      return;
    }
    if (hub_.closed(*client_)) {
      closing_ = true;
      ws_.async_close(websocket::close_code::policy_error, [self = shared_from_this()](beast::error_code) {});
      return;
    }
    if (auto due = hub_.next_due(*client_)) {
      const double wait = std::max(0.0, *due - hub_.now());
      timer_.expires_after(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
          std::chrono::duration<double>(wait + 1e-4)));
      timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
        if (!ec) self->pump();
      });
    }
  }

  websocket::stream<beast::tcp_stream> ws_;
  net::steady_timer timer_;
  StreamHub& hub_;
  std::optional<ClientId> client_;
  beast::flat_buffer buffer_;
  std::string outgoing_;
  bool writing_ = false;
  bool closing_ = false;
};

struct Roots {
  std::mutex mutex;
  std::filesystem::path web;
  std::filesystem::path run;

  std::optional<std::filesystem::path> resolve(std::string_view target) {
    std::lock_guard lock(mutex);
    constexpr std::string_view run_prefix = "/run/";
    if (target.starts_with(run_prefix)) {
      if (run.empty()) return std::nullopt;
      return resolve_static_path(run, target.substr(run_prefix.size() - 1));
    }
    if (web.empty()) return std::nullopt;
    return resolve_static_path(web, target);
  }
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, StreamHub& hub, std::shared_ptr<Roots> roots)
      : stream_(std::move(socket)), hub_(hub), roots_(std::move(roots)) {}

  void run() { read(); }

 private:
  void read() {
    request_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, request_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->on_read(ec);
    });
  }

  void on_read(beast::error_code ec) {
    if (ec) {
      beast::error_code ignored;
      stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
      return;
    }
    if (websocket::is_upgrade(request_)) {
      stream_.expires_never();
      std::make_shared<WsSession>(stream_.release_socket(), hub_)->accept(std::move(request_));
      return;
    }
    respond();
  }

  void respond() {
    auto response = std::make_shared<http::response<http::string_body>>();
    response->version(request_.version());
    response->keep_alive(request_.keep_alive());
    response->set(http::field::server, "seqmosaic");
    if (request_.method() != http::verb::get && request_.method() != http::verb::head) {
      response->result(http::status::method_not_allowed);
      response->body() = "method not allowed\n";
    } else if (auto path = roots_->resolve(std::string_view(request_.target().data(), request_.target().size()))) {
      std::ifstream in(*path, std::ios::binary);
      std::ostringstream body;
      body << in.rdbuf();
      response->result(http::status::ok);
      response->set(http::field::content_type, std::string(mime_type(*path)));
      if (request_.method() == http::verb::get) response->body() = body.str();
    } else {
      response->result(http::status::not_found);
      response->body() = "not found\n";
    }
    response->prepare_payload();
    http::async_write(stream_, *response, [self = shared_from_this(), response](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (!response->keep_alive()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->read();
    });
  }

  beast::tcp_stream stream_;
  StreamHub& hub_;
  std::shared_ptr<Roots> roots_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> request_;
};

}  // namespace

struct StreamServer::Impl {
  StreamHub& hub;
  ServerOptions options;
  net::io_context io{1};
  tcp::acceptor acceptor{io};
  std::shared_ptr<Roots> roots = std::make_shared<Roots>();
  std::thread thread;
  std::atomic<bool> running{false};
  unsigned short bound_port = 0;

  Impl(StreamHub& h, ServerOptions o) : hub(h), options(std::move(o)) {
    roots->web = options.web_root;
    roots->run = options.run_root;
  }

  void accept() {
    acceptor.async_accept(net::make_strand(io), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) {
        if (ec == net::error::operation_aborted) return;
      } else {
        std::make_shared<HttpSession>(std::move(socket), hub, roots)->run();
      }
      accept();
    });
  }
};

StreamServer::StreamServer(StreamHub& hub, ServerOptions options)
    : impl_(std::make_unique<Impl>(hub, std::move(options))) {}

StreamServer::~StreamServer() { stop(); }

void StreamServer::start() {
  if (impl_->running) return;
  beast::error_code ec;
  const auto address = net::ip::make_address(impl_->options.listen.host, ec);
  if (ec) fail(ErrorKind::ConfigError, "bad listen host '" + impl_->options.listen.host + "'");
  const tcp::endpoint endpoint{address, impl_->options.listen.port};
  auto& acceptor = impl_->acceptor;
  acceptor.open(endpoint.protocol(), ec);
  if (!ec) acceptor.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) acceptor.bind(endpoint, ec);
  if (!ec) acceptor.listen(net::socket_base::max_listen_connections, ec);
  if (ec) fail(ErrorKind::IoFailure, "cannot listen on " + impl_->options.listen.host + ":" +
                                         std::to_string(impl_->options.listen.port) + ": " + ec.message());
  impl_->bound_port = acceptor.local_endpoint().port();
  impl_->accept();
  impl_->running = true;
  impl_->thread = std::thread([this] { impl_->io.run(); });
}

void StreamServer::stop() {
  if (!impl_ || !impl_->running.exchange(false)) return;
  net::post(impl_->io, [this] {
    beast::error_code ignored;
    impl_->acceptor.close(ignored);
  });
  impl_->io.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

unsigned short StreamServer::port() const { return impl_->bound_port; }

void StreamServer::set_run_root(const std::filesystem::path& root) {
  std::lock_guard lock(impl_->roots->mutex);
  impl_->roots->run = root;
}

}  // namespace seqmosaic
