#pragma once

// Minimal RFC 6455 support: the opening handshake and binary message
// framing. Each binary message carries exactly one ProtocolFrame.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "falcon/error.hpp"

namespace falcon::ws {

class WsError : public Error {
 public:
  explicit WsError(const std::string& m) : Error("websocket_error", m) {}
};

/// Fresh base64 nonce for Sec-WebSocket-Key.
std::string random_key();

/// Sec-WebSocket-Accept value for a client key.
std::string accept_key(const std::string& client_key);

struct HttpRequest {
  std::string method;
  std::string target;
  std::map<std::string, std::string> headers;  // lower-case names
};

/// Parses an HTTP request head terminated by CRLFCRLF. Returns nullopt when
/// the terminator has not arrived yet; `consumed` receives the head length.
std::optional<HttpRequest> parse_http_request(std::string_view data, std::size_t& consumed);

/// Validates an upgrade request and builds the 101 response. Throws WsError.
std::string handshake_response(const HttpRequest& req);
std::string handshake_request(const std::string& host, const std::string& path, const std::string& key);
/// Checks a server's 101 response against the key we sent.
void verify_handshake_response(std::string_view head, const std::string& key);

enum class Opcode : std::uint8_t { continuation = 0x0, text = 0x1, binary = 0x2, close = 0x8, ping = 0x9, pong = 0xA };

/// One complete frame. Clients mask, servers do not.
std::vector<std::uint8_t> encode_frame(Opcode op, std::span<const std::uint8_t> payload, bool mask,
                                       std::uint32_t mask_key = 0x5A17C3E1);

struct Message {
  Opcode op;  // binary, text, close, ping or pong
  std::vector<std::uint8_t> payload;
};

/// Incremental frame reader with fragment reassembly.
class Reader {
 public:
  /// `require_mask`: frames from clients must be masked.
  Reader(bool require_mask, std::size_t max_message) : require_mask_(require_mask), max_message_(max_message) {}
  void feed(std::span<const std::uint8_t> bytes);
  /// Throws WsError on protocol violations.
  std::optional<Message> next();

 private:
  bool require_mask_;
  std::size_t max_message_;
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::optional<Opcode> fragment_op_;
  std::vector<std::uint8_t> fragments_;
};

}  // namespace falcon::ws
