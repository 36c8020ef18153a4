#include "needleplan/service/tcp.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <spdlog/spdlog.h>

namespace needleplan::service {

namespace {

[[noreturn]] void fail(const std::string& what) {
  throw Error(ErrorCode::IoError, what + ": " + std::strerror(errno));
}

bool send_all(int fd, std::string_view bytes) {
  while (!bytes.empty()) {
    const ssize_t n = ::send(fd, bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    bytes.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

struct TcpServer::Conn {
  int fd = -1;
  std::mutex write_mutex;
  bool write_ok = true;
  std::thread thread;
  std::atomic<bool> done{false};

  void write(const Envelope& env) {
    const std::string frame = encode_frame(env);
    std::lock_guard lock(write_mutex);
    if (write_ok) write_ok = send_all(fd, frame);
  }
};

TcpServer::TcpServer(std::shared_ptr<ServiceContext> ctx, std::uint16_t port, const std::string& bind_address)
    : ctx_(std::move(ctx)) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) fail("socket");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, bind_address.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw Error(ErrorCode::InvalidInput, "bad bind address " + bind_address);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 || ::listen(listen_fd_, 64) < 0) {
    const int err = errno;
    ::close(listen_fd_);
    errno = err;
    fail("bind/listen on port " + std::to_string(port));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpServer::~TcpServer() { stop(); }

void TcpServer::start() {
  accept_thread_ = std::thread([this] { accept_loop(); });
}

void TcpServer::accept_loop() {
  for (;;) {
    pollfd p{listen_fd_, POLLIN, 0};
    const int r = ::poll(&p, 1, 100);
    {
      std::lock_guard lock(mutex_);
      if (stopping_) return;
      // Reap finished connections.
      for (auto it = conns_.begin(); it != conns_.end();) {
        if ((*it)->done.load()) {
          (*it)->thread.join();
          ::close((*it)->fd);
          it = conns_.erase(it);
        } else {
          ++it;
        }
      }
    }
    if (r <= 0 || !(p.revents & POLLIN)) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    set_nodelay(fd);
    auto conn = std::make_shared<Conn>();
    conn->fd = fd;
    std::lock_guard lock(mutex_);
    if (stopping_) {
      ::close(fd);
      return;
    }
    conns_.push_back(conn);
    conn->thread = std::thread([this, conn] { serve(conn); });
  }
}

void TcpServer::serve(const std::shared_ptr<Conn>& conn) {
  spdlog::info("client connected (fd {})", conn->fd);
  {
    Connection session(ctx_, [conn](const Envelope& env) { conn->write(env); });
    char buf[65536];
    for (;;) {
      const ssize_t n = ::recv(conn->fd, buf, sizeof(buf), 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      if (!session.receive(std::string_view(buf, static_cast<std::size_t>(n)))) {
        spdlog::warn("dropping client (fd {}): unrecoverable framing", conn->fd);
        break;
      }
    }
    session.close();
  }
  ::shutdown(conn->fd, SHUT_RDWR);
  spdlog::info("client disconnected (fd {})", conn->fd);
  conn->done.store(true);
}

void TcpServer::stop() {
  std::list<std::shared_ptr<Conn>> conns;
  {
    std::lock_guard lock(mutex_);
    if (stopping_) return;
    stopping_ = true;
    conns.swap(conns_);
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  for (auto& c : conns) ::shutdown(c->fd, SHUT_RDWR);
  for (auto& c : conns) {
    if (c->thread.joinable()) c->thread.join();
    ::close(c->fd);
  }
  if (listen_fd_ >= 0) ::close(listen_fd_);
  listen_fd_ = -1;
}

// ---------------------------------------------------------------------------

TcpClient::TcpClient(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res) {
    throw Error(ErrorCode::IoError, "cannot resolve " + host);
  }
  fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd_ < 0 || ::connect(fd_, res->ai_addr, res->ai_addrlen) < 0) {
    const int err = errno;
    ::freeaddrinfo(res);
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
    errno = err;
    fail("connect to " + host + ":" + std::to_string(port));
  }
  ::freeaddrinfo(res);
  set_nodelay(fd_);
}

TcpClient::~TcpClient() {
  if (fd_ >= 0) ::close(fd_);
}

void TcpClient::send(const Envelope& env) { send_raw(encode_frame(env)); }

void TcpClient::send_raw(std::string_view bytes) {
  if (fd_ < 0 || !send_all(fd_, bytes)) throw Error(ErrorCode::IoError, "send failed");
}

std::optional<Envelope> TcpClient::receive(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    if (auto payload = decoder_.next_payload()) {
      last_receive_us_ = monotonic_us();
      try {
        return parse_envelope(*payload);
      } catch (const BadPayload& e) {
        throw Error(ErrorCode::ParseError, "server sent a malformed envelope: " + e.message);
      }
    }
    if (fd_ < 0) return std::nullopt;
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() < 0) return std::nullopt;
    pollfd p{fd_, POLLIN, 0};
    const int r = ::poll(&p, 1, static_cast<int>(left.count()));
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) return std::nullopt;
    char buf[65536];
    const ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
    if (n <= 0) {
      ::close(fd_);
      fd_ = -1;
      continue;
    }
    decoder_.feed(std::string_view(buf, static_cast<std::size_t>(n)));
  }
}

Envelope TcpClient::call(const std::string& op, const Json& body, std::chrono::milliseconds timeout) {
  const Json id = next_id_++;
  send(Envelope{id, Kind::request, op, body});
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() < 0) break;
    auto env = receive(left);
    if (!env) {
      if (!connected()) throw Error(ErrorCode::IoError, "connection closed while waiting for " + op);
      continue;
    }
    if (env->id == id && (env->kind == Kind::response || env->kind == Kind::error)) return *env;
    pending_.push_back(std::move(*env));
  }
  throw Error(ErrorCode::IoError, "timed out waiting for " + op);
}

std::optional<Envelope> TcpClient::next_event(std::chrono::milliseconds timeout) {
  if (!pending_.empty()) {
    Envelope env = std::move(pending_.front());
    pending_.pop_front();
    return env;
  }
  return receive(timeout);
}

}  // namespace needleplan::service
