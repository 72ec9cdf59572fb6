#pragma once

#include <memory>
#include <optional>
#include <string>

#include "falcon/net.hpp"
#include "falcon/protocol.hpp"

namespace falcon {

/// Blocking protocol client over either transport.
class Client {
 public:
  static Client connect_tcp(const std::string& host, int port);
  static Client connect_ws(const std::string& host, int port, const std::string& path = "/");

  void send(const ProtocolFrame& f);
  /// Next frame; nullopt on timeout or when the server closed the connection.
  std::optional<ProtocolFrame> receive(int timeout_ms = 30000);
  /// Sends `f` and returns the first reply that is not PROGRESS.
  ProtocolFrame request(const ProtocolFrame& f, int timeout_ms = 30000);
  void close();
  bool closed() const { return closed_; }

 private:
  explicit Client(std::unique_ptr<net::Transport> t) : t_(std::move(t)) {}
  std::unique_ptr<net::Transport> t_;
  bool closed_ = false;
};

}  // namespace falcon
