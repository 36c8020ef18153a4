#pragma once

// POSIX TCP transport: one session per connection, one reader thread each.

#include <chrono>
#include <cstdint>
#include <deque>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "needleplan/service/session.hpp"

namespace needleplan::service {

class TcpServer {
 public:
  /// Binds immediately; port 0 picks a free port.
  TcpServer(std::shared_ptr<ServiceContext> ctx, std::uint16_t port, const std::string& bind_address = "127.0.0.1");
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  /// Accept loop on a background thread.
  void start();
  /// Closes the listener and every connection, then joins all threads.
  void stop();

 private:
  struct Conn;
  void accept_loop();
  void serve(const std::shared_ptr<Conn>& conn);

  std::shared_ptr<ServiceContext> ctx_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::thread accept_thread_;
  std::mutex mutex_;
  std::list<std::shared_ptr<Conn>> conns_;
  bool stopping_ = false;
};

/// Blocking client used by tests, benchmarks and tools.
class TcpClient {
 public:
  TcpClient(const std::string& host, std::uint16_t port);
  ~TcpClient();
  TcpClient(const TcpClient&) = delete;
  TcpClient& operator=(const TcpClient&) = delete;

  void send(const Envelope& env);
  void send_raw(std::string_view bytes);
  /// Next envelope from the wire, or none on timeout / disconnect.
  std::optional<Envelope> receive(std::chrono::milliseconds timeout);
  /// Sends a request and waits for the envelope with the same id; envelopes
  /// arriving meanwhile are queued for `next_event`. Throws IoError on timeout.
  Envelope call(const std::string& op, const Json& body = Json::object(),
                std::chrono::milliseconds timeout = std::chrono::seconds(60));
  /// Queued envelope first, then the wire.
  std::optional<Envelope> next_event(std::chrono::milliseconds timeout);
  bool connected() const noexcept { return fd_ >= 0; }
  /// Monotonic microseconds at which the most recently decoded envelope arrived.
  std::int64_t last_receive_us() const noexcept { return last_receive_us_; }

 private:
  int fd_ = -1;
  FrameDecoder decoder_;
  std::deque<Envelope> pending_;
  std::uint64_t next_id_ = 1;
  std::int64_t last_receive_us_ = 0;
};

}  // namespace needleplan::service
