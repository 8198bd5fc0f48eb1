#pragma once

// Blocking TCP transport for GFED frames (POSIX sockets).

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <functional>
#include <string>
#include <thread>
#include <utility>

#include "gridfed/error.hpp"
#include "gridfed/wire.hpp"

namespace gridfed {

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

// "host:port" or ":port".
inline Endpoint parse_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw ConfigError("address '" + s + "' must look like host:port");
  Endpoint e;
  if (colon > 0) e.host = s.substr(0, colon);
  const std::string port = s.substr(colon + 1);
  try {
    std::size_t used = 0;
    const unsigned long p = std::stoul(port, &used);
    if (used != port.size() || p > 65535) throw std::out_of_range("port");
    e.port = static_cast<std::uint16_t>(p);
  } catch (const std::exception&) {
    throw ConfigError("bad port in address '" + s + "'");
  }
  return e;
}

namespace net_detail {

inline std::string errno_text(const std::string& what) { return what + ": " + std::strerror(errno); }

struct AddrInfo {
  addrinfo* head = nullptr;
  AddrInfo(const Endpoint& ep, bool passive) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    if (passive) hints.ai_flags = AI_PASSIVE;
    const std::string port = std::to_string(ep.port);
    const int rc = getaddrinfo(ep.host.empty() ? nullptr : ep.host.c_str(), port.c_str(), &hints, &head);
    if (rc != 0) throw TransportError("cannot resolve '" + ep.host + "': " + gai_strerror(rc));
  }
  ~AddrInfo() {
    if (head) freeaddrinfo(head);
  }
  AddrInfo(const AddrInfo&) = delete;
  AddrInfo& operator=(const AddrInfo&) = delete;
};

}  // namespace net_detail

// One connected stream socket. Move-only; closes on destruction.
class Connection {
 public:
  Connection() = default;
  explicit Connection(int fd) : fd_(fd) {
    int one = 1;
    setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }
  Connection(Connection&& o) noexcept : fd_(std::exchange(o.fd_, -1)), tap_(std::move(o.tap_)) {}
  Connection& operator=(Connection&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
      tap_ = std::move(o.tap_);
    }
    return *this;
  }
  ~Connection() { close(); }

  bool is_open() const noexcept { return fd_ >= 0; }
  void close() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  void send(const Message& m) {
    const auto bytes = encode_message(m);
    if (tap_) tap_(bytes);
    std::size_t sent = 0;
    while (sent < bytes.size()) {
      const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw TransportError(net_detail::errno_text("send failed"));
      sent += static_cast<std::size_t>(n);
    }
  }

  Message receive() {
    std::vector<std::uint8_t> buf(kFrameHeaderSize);
    read_exact(buf.data(), buf.size());
    const FrameHeader h = decode_header(buf);
    buf.resize(kFrameHeaderSize + h.payload_len);
    read_exact(buf.data() + kFrameHeaderSize, h.payload_len);
    if (tap_) tap_(buf);
    return decode_message(buf);
  }

  // Observes every encoded frame sent or received; used by tests to inspect wire bytes.
  void set_tap(std::function<void(const std::vector<std::uint8_t>&)> tap) { tap_ = std::move(tap); }

  static Connection connect(const Endpoint& ep, std::chrono::milliseconds retry_for = std::chrono::seconds(10)) {
    const auto deadline = std::chrono::steady_clock::now() + retry_for;
    while (true) {
      net_detail::AddrInfo ai(ep, false);
      for (addrinfo* p = ai.head; p; p = p->ai_next) {
        const int fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) return Connection(fd);
        ::close(fd);
      }
      if (std::chrono::steady_clock::now() >= deadline) {
        throw TransportError("cannot connect to " + ep.host + ":" + std::to_string(ep.port));
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  }

 private:
  void read_exact(std::uint8_t* dst, std::size_t len) {
    std::size_t got = 0;
    while (got < len) {
      const ssize_t n = ::recv(fd_, dst + got, len - got, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n < 0) throw TransportError(net_detail::errno_text("recv failed"));
      if (n == 0) {
        throw TransportError("peer closed the connection after " + std::to_string(got) + " of " +
                             std::to_string(len) + " bytes");
      }
      got += static_cast<std::size_t>(n);
    }
  }

  int fd_ = -1;
  std::function<void(const std::vector<std::uint8_t>&)> tap_;
};

class Listener {
 public:
  explicit Listener(const Endpoint& ep) {
    net_detail::AddrInfo ai(ep, true);
    for (addrinfo* p = ai.head; p; p = p->ai_next) {
      const int fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
      if (fd < 0) continue;
      int one = 1;
      setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
      if (::bind(fd, p->ai_addr, p->ai_addrlen) == 0 && ::listen(fd, 16) == 0) {
        fd_ = fd;
        break;
      }
      ::close(fd);
    }
    if (fd_ < 0) {
      throw TransportError(net_detail::errno_text("cannot listen on " + ep.host + ":" + std::to_string(ep.port)));
    }
    sockaddr_in addr{};
    socklen_t len = sizeof(addr);
    getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }
  ~Listener() {
    if (fd_ >= 0) ::close(fd_);
  }
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;

  // Actual bound port; differs from the requested one when that was 0.
  std::uint16_t port() const noexcept { return port_; }

  Connection accept() {
    while (true) {
      const int fd = ::accept(fd_, nullptr, nullptr);
      if (fd >= 0) return Connection(fd);
      if (errno != EINTR) throw TransportError(net_detail::errno_text("accept failed"));
    }
  }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

}  // namespace gridfed
