#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "keyless/errors.hpp"
#include "keyless/wire.hpp"

namespace keyless {

// Byte-stream abstraction the protocol runs over. recv_some returning 0
// means the peer closed cleanly.
class ByteChannel {
 public:
  virtual ~ByteChannel() = default;
  virtual void send_all(const std::uint8_t* data, std::size_t size) = 0;
  virtual std::size_t recv_some(std::uint8_t* data, std::size_t size) = 0;
  virtual void close() = 0;
};

// Reads exactly `size` bytes. Returns false only when the stream ends
// cleanly before the first byte; an EOF mid-read throws.
inline bool recv_exact(ByteChannel& ch, std::uint8_t* data, std::size_t size) {
  std::size_t got = 0;
  while (got < size) {
    const std::size_t n = ch.recv_some(data + got, size - got);
    if (n == 0) {
      if (got == 0) return false;
      throw TransportError("connection closed mid-frame");
    }
    got += n;
  }
  return true;
}

// Sends one framed message; optionally counts the bytes put on the wire.
inline void write_frame(ByteChannel& ch, const ProtocolMessage& msg,
                        std::uint64_t* bytes_out = nullptr) {
  const std::vector<std::uint8_t> frame = encode_frame(msg);
  ch.send_all(frame.data(), frame.size());
  if (bytes_out) *bytes_out += frame.size();
}

// Reads one framed message. Returns nullopt on a clean close at a frame
// boundary; throws TransportError if the stream dies inside a frame and
// WireError if the frame is malformed.
inline std::optional<ProtocolMessage> read_frame(
    ByteChannel& ch, std::uint64_t* bytes_in = nullptr) {
  std::uint8_t header[4];
  if (!recv_exact(ch, header, 4)) return std::nullopt;
  const std::size_t len = (std::size_t(header[0]) << 24) |
                          (std::size_t(header[1]) << 16) |
                          (std::size_t(header[2]) << 8) |
                          std::size_t(header[3]);
  if (len > kMaxFrameBytes) {
    throw WireError("frame payload exceeds the 64 MiB cap", 0);
  }
  std::vector<std::uint8_t> payload(len);
  if (len > 0 && !recv_exact(ch, payload.data(), len)) {
    throw TransportError("connection closed mid-frame");
  }
  if (bytes_in) *bytes_in += 4 + len;
  return decode_payload(payload.data(), payload.size());
}

// ---------------------------------------------------------------------------
// In-process loopback
// ---------------------------------------------------------------------------

// A pair of byte queues guarded by one mutex; each endpoint sends into the
// peer's queue. Closing either endpoint wakes both directions; readers may
// drain whatever was queued before the close.
class LoopbackChannel : public ByteChannel {
  struct Pipe {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::uint8_t> a_to_b;
    std::deque<std::uint8_t> b_to_a;
    bool closed = false;
  };

 public:
  static std::pair<std::unique_ptr<LoopbackChannel>,
                   std::unique_ptr<LoopbackChannel>>
  make_pair() {
    auto pipe = std::make_shared<Pipe>();
    auto a = std::unique_ptr<LoopbackChannel>(new LoopbackChannel(pipe, true));
    auto b = std::unique_ptr<LoopbackChannel>(new LoopbackChannel(pipe, false));
    return {std::move(a), std::move(b)};
  }

  void send_all(const std::uint8_t* data, std::size_t size) override {
    std::lock_guard<std::mutex> lock(pipe_->mu);
    if (pipe_->closed) throw TransportError("loopback channel is closed");
    auto& q = side_a_ ? pipe_->a_to_b : pipe_->b_to_a;
    q.insert(q.end(), data, data + size);
    pipe_->cv.notify_all();
  }

  std::size_t recv_some(std::uint8_t* data, std::size_t size) override {
    std::unique_lock<std::mutex> lock(pipe_->mu);
    auto& q = side_a_ ? pipe_->b_to_a : pipe_->a_to_b;
    pipe_->cv.wait(lock, [&] { return !q.empty() || pipe_->closed; });
    if (q.empty()) return 0;  // closed and drained
    const std::size_t n = std::min(size, q.size());
    std::copy_n(q.begin(), n, data);
    q.erase(q.begin(), q.begin() + static_cast<std::ptrdiff_t>(n));
    return n;
  }

  void close() override {
    std::lock_guard<std::mutex> lock(pipe_->mu);
    pipe_->closed = true;
    pipe_->cv.notify_all();
  }

 private:
  LoopbackChannel(std::shared_ptr<Pipe> pipe, bool side_a)
      : pipe_(std::move(pipe)), side_a_(side_a) {}

  std::shared_ptr<Pipe> pipe_;
  bool side_a_;
};

// ---------------------------------------------------------------------------
// TCP
// ---------------------------------------------------------------------------

class TcpChannel : public ByteChannel {
 public:
  explicit TcpChannel(int fd) : fd_(fd) {}
  TcpChannel(const TcpChannel&) = delete;
  TcpChannel& operator=(const TcpChannel&) = delete;
  ~TcpChannel() override { close(); }

  static std::unique_ptr<TcpChannel> connect_to(const std::string& host,
                                                std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string service = std::to_string(port);
    const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res);
    if (rc != 0) {
      throw TransportError("cannot resolve " + host + ": " +
                           gai_strerror(rc));
    }
    int fd = -1;
    std::string err = "no addresses";
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
      fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd < 0) {
        err = std::strerror(errno);
        continue;
      }
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
      err = std::strerror(errno);
      ::close(fd);
      fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) {
      throw TransportError("cannot connect to " + host + ":" + service +
                           ": " + err);
    }
    return std::make_unique<TcpChannel>(fd);
  }

  void send_all(const std::uint8_t* data, std::size_t size) override {
    std::size_t sent = 0;
    while (sent < size) {
      const ssize_t n =
          ::send(fd_, data + sent, size - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("send failed: ") +
                             std::strerror(errno));
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  std::size_t recv_some(std::uint8_t* data, std::size_t size) override {
    for (;;) {
      const ssize_t n = ::recv(fd_, data, size, 0);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("recv failed: ") +
                             std::strerror(errno));
      }
      return static_cast<std::size_t>(n);
    }
  }

  void close() override {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_ = -1;
};

class TcpListener {
 public:
  TcpListener(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const std::string service = std::to_string(port);
    const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(),
                                 service.c_str(), &hints, &res);
    if (rc != 0) {
      throw TransportError("cannot resolve " + host + ": " +
                           gai_strerror(rc));
    }
    std::string err = "no addresses";
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
      fd_ = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd_ < 0) {
        err = std::strerror(errno);
        continue;
      }
      const int one = 1;
      ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      if (::bind(fd_, ai->ai_addr, ai->ai_addrlen) == 0 &&
          ::listen(fd_, 16) == 0) {
        break;
      }
      err = std::strerror(errno);
      ::close(fd_);
      fd_ = -1;
    }
    ::freeaddrinfo(res);
    if (fd_ < 0) {
      throw TransportError("cannot listen on " + host + ":" + service + ": " +
                           err);
    }
    sockaddr_storage addr{};
    socklen_t len = sizeof addr;
    if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
      const std::string msg = std::strerror(errno);
      ::close(fd_);
      fd_ = -1;
      throw TransportError("getsockname failed: " + msg);
    }
    port_ = addr.ss_family == AF_INET6
                ? ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port)
                : ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  }

  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;
  ~TcpListener() { close(); }

  std::uint16_t port() const { return port_; }

  // Waits for a connection, polling so a stop flag set by another thread
  // (or a signal handler) is honored within ~100 ms. Returns nullptr when
  // stopped or when the listener was closed.
  std::unique_ptr<TcpChannel> accept(const std::atomic<bool>& stop) {
    while (!stop.load(std::memory_order_relaxed)) {
      if (fd_ < 0) return nullptr;
      pollfd pfd{fd_, POLLIN, 0};
      const int rc = ::poll(&pfd, 1, 100);
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("poll failed: ") +
                             std::strerror(errno));
      }
      if (rc == 0) continue;
      const int client = ::accept(fd_, nullptr, nullptr);
      if (client < 0) {
        if (errno == EINTR || errno == ECONNABORTED) continue;
        if (fd_ < 0 || errno == EBADF || errno == EINVAL) return nullptr;
        throw TransportError(std::string("accept failed: ") +
                             std::strerror(errno));
      }
      return std::make_unique<TcpChannel>(client);
    }
    return nullptr;
  }

  void close() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

// ---------------------------------------------------------------------------
// Recording decorator
// ---------------------------------------------------------------------------

// Captures every byte that crosses an inner channel, for transcript audits.
class RecordingChannel : public ByteChannel {
 public:
  explicit RecordingChannel(ByteChannel& inner) : inner_(inner) {}

  void send_all(const std::uint8_t* data, std::size_t size) override {
    sent_.insert(sent_.end(), data, data + size);
    inner_.send_all(data, size);
  }

  std::size_t recv_some(std::uint8_t* data, std::size_t size) override {
    const std::size_t n = inner_.recv_some(data, size);
    received_.insert(received_.end(), data, data + n);
    return n;
  }

  void close() override { inner_.close(); }

  const std::vector<std::uint8_t>& sent() const { return sent_; }
  const std::vector<std::uint8_t>& received() const { return received_; }

 private:
  ByteChannel& inner_;
  std::vector<std::uint8_t> sent_;
  std::vector<std::uint8_t> received_;
};

}  // namespace keyless
