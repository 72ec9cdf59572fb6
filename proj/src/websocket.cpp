#include "falcon/websocket.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <sstream>

#include <openssl/evp.h>
#include <openssl/sha.h>

namespace falcon::ws {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return std::string(s);
}

bool has_token(const std::string& value, const std::string& token) {
  std::stringstream ss(lower(value));
  std::string part;
  while (std::getline(ss, part, ','))
    if (trim(part) == token) return true;
  return false;
}

std::string base64(std::span<const unsigned char> in) {
  std::string out(4 * ((in.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), in.data(), static_cast<int>(in.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

}  // namespace

std::string random_key() {
  std::random_device rd;
  unsigned char raw[16];
  for (auto& c : raw) c = static_cast<unsigned char>(rd());
  return base64(raw);
}

std::string accept_key(const std::string& client_key) {
  const std::string s = client_key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(s.data()), s.size(), digest);
  return base64(digest);
}

std::optional<HttpRequest> parse_http_request(std::string_view data, std::size_t& consumed) {
  const auto end = data.find("\r\n\r\n");
  if (end == std::string_view::npos) {
    if (data.size() > 16384) throw WsError("HTTP request head too large");
    return std::nullopt;
  }
  consumed = end + 4;
  std::string_view head = data.substr(0, end);
  HttpRequest req;
  std::size_t line_end = head.find("\r\n");
  const std::string_view request_line = head.substr(0, line_end);
  const auto sp1 = request_line.find(' ');
  const auto sp2 = request_line.rfind(' ');
  if (sp1 == std::string_view::npos || sp2 == sp1) throw WsError("malformed HTTP request line");
  req.method = std::string(request_line.substr(0, sp1));
  req.target = std::string(request_line.substr(sp1 + 1, sp2 - sp1 - 1));
  while (line_end != std::string_view::npos) {
    const std::size_t start = line_end + 2;
    line_end = head.find("\r\n", start);
    const std::string_view line = head.substr(start, line_end == std::string_view::npos ? head.npos : line_end - start);
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) continue;
    req.headers[lower(trim(line.substr(0, colon)))] = trim(line.substr(colon + 1));
  }
  return req;
}

std::string handshake_response(const HttpRequest& req) {
  auto get = [&](const char* k) -> std::string {
    auto it = req.headers.find(k);
    return it == req.headers.end() ? std::string() : it->second;
  };
  if (req.method != "GET") throw WsError("WebSocket upgrade must use GET");
  if (!has_token(get("upgrade"), "websocket")) throw WsError("missing Upgrade: websocket");
  if (!has_token(get("connection"), "upgrade")) throw WsError("missing Connection: Upgrade");
  if (get("sec-websocket-version") != "13") throw WsError("unsupported WebSocket version");
  const std::string key = get("sec-websocket-key");
  if (key.empty()) throw WsError("missing Sec-WebSocket-Key");
  return "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Accept: " +
         accept_key(key) + "\r\n\r\n";
}

std::string handshake_request(const std::string& host, const std::string& path, const std::string& key) {
  return "GET " + path + " HTTP/1.1\r\nHost: " + host +
         "\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Key: " + key +
         "\r\nSec-WebSocket-Version: 13\r\n\r\n";
}

void verify_handshake_response(std::string_view head, const std::string& key) {
  if (!head.starts_with("HTTP/1.1 101")) throw WsError("server refused the WebSocket upgrade");
  const std::string want = "sec-websocket-accept: " + lower(accept_key(key));
  if (lower(std::string(head)).find(want) == std::string::npos) throw WsError("bad Sec-WebSocket-Accept");
}

std::vector<std::uint8_t> encode_frame(Opcode op, std::span<const std::uint8_t> payload, bool mask,
                                       std::uint32_t mask_key) {
  std::vector<std::uint8_t> out;
  out.reserve(payload.size() + 14);
  out.push_back(static_cast<std::uint8_t>(0x80 | static_cast<std::uint8_t>(op)));
  const std::uint8_t mbit = mask ? 0x80 : 0x00;
  const std::size_t n = payload.size();
  if (n < 126) {
    out.push_back(static_cast<std::uint8_t>(mbit | n));
  } else if (n <= 0xFFFF) {
    out.push_back(mbit | 126);
    out.push_back(static_cast<std::uint8_t>(n >> 8));
    out.push_back(static_cast<std::uint8_t>(n));
  } else {
    out.push_back(mbit | 127);
    for (int s = 56; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(n) >> s));
  }
  if (!mask) {
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
  }
  const std::uint8_t k[4] = {static_cast<std::uint8_t>(mask_key >> 24), static_cast<std::uint8_t>(mask_key >> 16),
                             static_cast<std::uint8_t>(mask_key >> 8), static_cast<std::uint8_t>(mask_key)};
  out.insert(out.end(), k, k + 4);
  for (std::size_t i = 0; i < n; ++i) out.push_back(payload[i] ^ k[i % 4]);
  return out;
}

void Reader::feed(std::span<const std::uint8_t> bytes) {
  if (pos_ > 0 && pos_ >= buf_.size() / 2) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<Message> Reader::next() {
  for (;;) {
    const std::size_t avail = buf_.size() - pos_;
    const std::uint8_t* p = buf_.data() + pos_;
    if (avail < 2) return std::nullopt;
    const bool fin = p[0] & 0x80;
    if (p[0] & 0x70) throw WsError("reserved bits set");
    const auto op = static_cast<Opcode>(p[0] & 0x0F);
    const bool masked = p[1] & 0x80;
    std::uint64_t len = p[1] & 0x7F;
    std::size_t hdr = 2;
    if (len == 126) {
      if (avail < 4) return std::nullopt;
      len = (static_cast<std::uint64_t>(p[2]) << 8) | p[3];
      hdr = 4;
    } else if (len == 127) {
      if (avail < 10) return std::nullopt;
      len = 0;
      for (int i = 0; i < 8; ++i) len = (len << 8) | p[2 + i];
      hdr = 10;
    }
    if (masked != require_mask_) throw WsError(require_mask_ ? "client frame is not masked" : "server frame is masked");
    const bool control = static_cast<std::uint8_t>(op) & 0x8;
    if (control && (len > 125 || !fin)) throw WsError("invalid control frame");
    if (len > max_message_ || fragments_.size() + len > max_message_) throw WsError("message exceeds size limit");
    const std::size_t mask_len = masked ? 4 : 0;
    if (avail < hdr + mask_len + len) return std::nullopt;
    std::vector<std::uint8_t> payload(p + hdr + mask_len, p + hdr + mask_len + len);
    if (masked)
      for (std::size_t i = 0; i < payload.size(); ++i) payload[i] ^= p[hdr + i % 4];
    pos_ += hdr + mask_len + len;

    switch (op) {
      case Opcode::close:
      case Opcode::ping:
      case Opcode::pong: return Message{op, std::move(payload)};
      case Opcode::text:
      case Opcode::binary:
        if (fragment_op_) throw WsError("new message before the previous one finished");
        if (fin) return Message{op, std::move(payload)};
        fragment_op_ = op;
        fragments_ = std::move(payload);
        continue;
      case Opcode::continuation:
        if (!fragment_op_) throw WsError("continuation without a message");
        fragments_.insert(fragments_.end(), payload.begin(), payload.end());
        if (!fin) continue;
        {
          Message m{*fragment_op_, std::move(fragments_)};
          fragment_op_.reset();
          fragments_.clear();
          return m;
        }
      default: throw WsError("unknown opcode");
    }
  }
}

}  // namespace falcon::ws
