#include "falcon/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <mutex>

namespace falcon::net {

Socket& Socket::operator=(Socket&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = std::exchange(o.fd_, -1);
  }
  return *this;
}

Socket::~Socket() { close(); }

void Socket::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

void Socket::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

std::size_t Socket::read_some(std::uint8_t* buf, std::size_t n) {
  for (;;) {
    const ssize_t r = ::recv(fd_, buf, n, 0);
    if (r >= 0) return static_cast<std::size_t>(r);
    if (errno == EINTR) continue;
    if (errno == ECONNRESET || errno == ENOTCONN || errno == EBADF) return 0;
    throw IoError(std::string("recv: ") + std::strerror(errno));
  }
}

void Socket::write_all(std::span<const std::uint8_t> bytes) {
  std::size_t off = 0;
  while (off < bytes.size()) {
    const ssize_t r = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("send: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(r);
  }
}

bool Socket::wait_readable(int timeout_ms) {
  pollfd p{fd_, POLLIN, 0};
  for (;;) {
    const int r = ::poll(&p, 1, timeout_ms);
    if (r >= 0) return r > 0;
    if (errno != EINTR) throw IoError(std::string("poll: ") + std::strerror(errno));
  }
}

namespace {

sockaddr_in resolve(const std::string& host, int port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (host.empty() || host == "0.0.0.0") {
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    return addr;
  }
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  addrinfo* res = nullptr;
  if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || !res) throw IoError("cannot resolve host " + host);
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return addr;
}

void no_delay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace

Socket listen_tcp(const std::string& host, int port, int& bound_port) {
  if (port < 0 || port > 65535) throw InvalidArgument("port out of range: " + std::to_string(port));
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) throw IoError(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  const sockaddr_in addr = resolve(host, port);
  if (::bind(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
    throw IoError("bind " + host + ":" + std::to_string(port) + ": " + std::strerror(errno));
  if (::listen(s.fd(), 64) != 0) throw IoError(std::string("listen: ") + std::strerror(errno));
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&bound), &len);
  bound_port = ntohs(bound.sin_port);
  return s;
}

std::optional<Socket> accept_tcp(Socket& listener, int timeout_ms) {
  if (!listener.wait_readable(timeout_ms)) return std::nullopt;
  const int fd = ::accept(listener.fd(), nullptr, nullptr);
  if (fd < 0) return std::nullopt;
  no_delay(fd);
  return Socket(fd);
}

Socket connect_tcp(const std::string& host, int port) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) throw IoError(std::string("socket: ") + std::strerror(errno));
  const sockaddr_in addr = resolve(host, port);
  if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
    throw IoError("connect " + host + ":" + std::to_string(port) + ": " + std::strerror(errno));
  no_delay(s.fd());
  return s;
}

namespace {

class TcpTransport : public Transport {
 public:
  explicit TcpTransport(Socket s) : sock_(std::move(s)) {}

  void send(const ProtocolFrame& f) override {
    const auto bytes = encode_frame(f);
    std::lock_guard lock(write_mu_);
    sock_.write_all(bytes);
  }

  std::optional<ProtocolFrame> receive(int timeout_ms, bool* timed_out) override {
    if (timed_out) *timed_out = false;
    std::uint8_t buf[65536];
    for (;;) {
      if (auto f = decoder_.next()) return f;
      if (!sock_.wait_readable(timeout_ms)) {
        if (timed_out) *timed_out = true;
        return std::nullopt;
      }
      const std::size_t n = sock_.read_some(buf, sizeof buf);
      if (n == 0) return std::nullopt;
      decoder_.feed({buf, n});
    }
  }

  void shutdown() override { sock_.shutdown(); }
  const char* kind() const override { return "tcp"; }

 private:
  Socket sock_;
  FrameDecoder decoder_;
  std::mutex write_mu_;
};

class WsTransport : public Transport {
 public:
  WsTransport(Socket s, bool is_client, std::vector<std::uint8_t> pending)
      : sock_(std::move(s)), client_(is_client), reader_(!is_client, kMaxFrameBytes) {
    if (!pending.empty()) reader_.feed(pending);
  }

  void send(const ProtocolFrame& f) override {
    write(ws::Opcode::binary, encode_frame(f));
  }

  std::optional<ProtocolFrame> receive(int timeout_ms, bool* timed_out) override {
    if (timed_out) *timed_out = false;
    std::uint8_t buf[65536];
    for (;;) {
      while (auto m = reader_.next()) {
        switch (m->op) {
          case ws::Opcode::binary: {
            const DecodeResult r = decode_frame(m->payload);
            if (r.status == DecodeResult::Status::error) throw ProtocolError(r.error, r.message);
            if (r.status == DecodeResult::Status::need_more_data || r.consumed != m->payload.size())
              throw ProtocolError(ProtocolErrorKind::bad_header, "WebSocket message must hold exactly one frame");
            return r.frame;
          }
          case ws::Opcode::text: throw ws::WsError("text messages are not supported");
          case ws::Opcode::ping: write(ws::Opcode::pong, m->payload); break;
          case ws::Opcode::pong: break;
          case ws::Opcode::close:
            try {
              write(ws::Opcode::close, {});
            } catch (const IoError&) {
            }
            return std::nullopt;
          default: break;
        }
      }
      if (!sock_.wait_readable(timeout_ms)) {
        if (timed_out) *timed_out = true;
        return std::nullopt;
      }
      const std::size_t n = sock_.read_some(buf, sizeof buf);
      if (n == 0) return std::nullopt;
      reader_.feed({buf, n});
    }
  }

  void shutdown() override { sock_.shutdown(); }
  const char* kind() const override { return "websocket"; }

 private:
  void write(ws::Opcode op, std::span<const std::uint8_t> payload) {
    std::lock_guard lock(write_mu_);
    sock_.write_all(ws::encode_frame(op, payload, client_, 0x9E3779B9u ^ static_cast<std::uint32_t>(++sent_)));
  }

  Socket sock_;
  bool client_;
  ws::Reader reader_;
  std::mutex write_mu_;
  std::uint32_t sent_ = 0;
};

// Reads an HTTP head; returns it and any bytes that followed.
std::pair<std::string, std::vector<std::uint8_t>> read_head(Socket& s, int timeout_ms) {
  std::string data;
  std::uint8_t buf[4096];
  for (;;) {
    const auto end = data.find("\r\n\r\n");
    if (end != std::string::npos) {
      std::vector<std::uint8_t> rest(data.begin() + static_cast<std::ptrdiff_t>(end + 4), data.end());
      data.resize(end + 4);
      return {data, rest};
    }
    if (data.size() > 16384) throw ws::WsError("HTTP head too large");
    if (!s.wait_readable(timeout_ms)) throw ws::WsError("WebSocket handshake timed out");
    const std::size_t n = s.read_some(buf, sizeof buf);
    if (n == 0) throw ws::WsError("connection closed during handshake");
    data.append(reinterpret_cast<const char*>(buf), n);
  }
}

void write_text(Socket& s, const std::string& t) {
  s.write_all({reinterpret_cast<const std::uint8_t*>(t.data()), t.size()});
}

}  // namespace

std::unique_ptr<Transport> tcp_transport(Socket s) { return std::make_unique<TcpTransport>(std::move(s)); }

std::unique_ptr<Transport> ws_server_transport(Socket s, int handshake_timeout_ms) {
  auto [head, rest] = read_head(s, handshake_timeout_ms);
  std::size_t consumed = 0;
  const auto req = ws::parse_http_request(head, consumed);
  try {
    write_text(s, ws::handshake_response(*req));
  } catch (const ws::WsError& e) {
    write_text(s, std::string("HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n"));
    throw;
  }
  return std::make_unique<WsTransport>(std::move(s), false, std::move(rest));
}

std::unique_ptr<Transport> ws_client_transport(Socket s, const std::string& host, const std::string& path) {
  const std::string key = ws::random_key();
  write_text(s, ws::handshake_request(host, path, key));
  auto [head, rest] = read_head(s, 5000);
  ws::verify_handshake_response(head, key);
  return std::make_unique<WsTransport>(std::move(s), true, std::move(rest));
}

}  // namespace falcon::net
