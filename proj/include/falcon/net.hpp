#pragma once

// Blocking POSIX sockets and the two frame transports built on them.

#include <memory>
#include <optional>
#include <string>

#include "falcon/protocol.hpp"
#include "falcon/websocket.hpp"

namespace falcon::net {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket();

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  /// Bytes read, 0 on orderly EOF. Throws IoError.
  std::size_t read_some(std::uint8_t* buf, std::size_t n);
  void write_all(std::span<const std::uint8_t> bytes);
  /// Waits for readability; false on timeout. Negative timeout waits forever.
  bool wait_readable(int timeout_ms);
  /// Unblocks readers in other threads.
  void shutdown();
  void close();

 private:
  int fd_ = -1;
};

/// Listening socket; port 0 picks an ephemeral port.
Socket listen_tcp(const std::string& host, int port, int& bound_port);
/// Waits up to `timeout_ms` for a connection.
std::optional<Socket> accept_tcp(Socket& listener, int timeout_ms);
Socket connect_tcp(const std::string& host, int port);

/// Message-oriented frame channel. send() may be called from one thread
/// while another blocks in receive().
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(const ProtocolFrame& f) = 0;
  /// Next frame, or nullopt on EOF or timeout (`timed_out` tells which).
  /// Throws ProtocolError / WsError / IoError.
  virtual std::optional<ProtocolFrame> receive(int timeout_ms, bool* timed_out = nullptr) = 0;
  virtual void shutdown() = 0;
  virtual const char* kind() const = 0;
};

/// Raw byte stream of concatenated frames.
std::unique_ptr<Transport> tcp_transport(Socket s);
/// Completes the server side of the WebSocket handshake, then carries one
/// frame per binary message.
std::unique_ptr<Transport> ws_server_transport(Socket s, int handshake_timeout_ms = 5000);
/// Opens a WebSocket as a client.
std::unique_ptr<Transport> ws_client_transport(Socket s, const std::string& host, const std::string& path);

}  // namespace falcon::net
