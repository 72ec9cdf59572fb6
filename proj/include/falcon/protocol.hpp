#pragma once

// Framed messages shared by the stream and browser transports.
//
//   "FALC" | u8 version | u8 type | u32 BE header_len | JSON header
//          | u32 BE blob_len | blob

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "falcon/error.hpp"

namespace falcon {

enum class MsgType : std::uint8_t {
  hello = 0x01,
  hello_ack = 0x02,
  capture_begin = 0x10,
  capture_frame = 0x11,
  capture_end = 0x12,
  select_asset = 0x13,
  progress = 0x20,
  model_ready = 0x21,
  model_download = 0x22,
  infer_request = 0x30,
  infer_response = 0x31,
  render_and_infer = 0x32,
  render_result = 0x33,
  error = 0x7F,
};

inline constexpr MsgType kAllMsgTypes[] = {
    MsgType::hello,          MsgType::hello_ack,      MsgType::capture_begin, MsgType::capture_frame,
    MsgType::capture_end,    MsgType::select_asset,   MsgType::progress,      MsgType::model_ready,
    MsgType::model_download, MsgType::infer_request,  MsgType::infer_response, MsgType::render_and_infer,
    MsgType::render_result,  MsgType::error,
};

std::optional<MsgType> msg_type_from_code(std::uint8_t code);
const char* to_string(MsgType t);

inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::size_t kMaxFrameBytes = 16u << 20;
inline constexpr std::size_t kFrameOverhead = 4 + 1 + 1 + 4 + 4;

struct ProtocolFrame {
  MsgType type = MsgType::hello;
  std::string header = "{}";  // raw JSON text, kept verbatim
  std::vector<std::uint8_t> blob;

  static ProtocolFrame make(MsgType type, const nlohmann::json& header, std::vector<std::uint8_t> blob = {});
  nlohmann::json header_json() const;  // parsed header; throws ProtocolError on bad JSON

  friend bool operator==(const ProtocolFrame&, const ProtocolFrame&) = default;
};

enum class ProtocolErrorKind { bad_magic, unknown_version, unknown_type, oversize, bad_header };
const char* to_string(ProtocolErrorKind k);

class ProtocolError : public Error {
 public:
  ProtocolError(ProtocolErrorKind kind, const std::string& m) : Error("protocol_error", m), kind_(kind) {}
  ProtocolErrorKind kind() const { return kind_; }

 private:
  ProtocolErrorKind kind_;
};

std::vector<std::uint8_t> encode_frame(const ProtocolFrame& f);

struct DecodeResult {
  enum class Status { frame, need_more_data, error };
  Status status = Status::need_more_data;
  ProtocolFrame frame;       // valid when status == frame
  std::size_t consumed = 0;  // bytes of the decoded frame
  ProtocolErrorKind error = ProtocolErrorKind::bad_magic;
  std::string message;
};

/// Decodes the first frame in `bytes`. Never reads past `bytes`; rejects a
/// bad prefix as soon as enough bytes are present to tell.
DecodeResult decode_frame(std::span<const std::uint8_t> bytes);

/// Incremental decoder over a byte stream. After an error it stays failed.
class FrameDecoder {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  /// Next complete frame, or nullopt when more bytes are needed. Throws
  /// ProtocolError.
  std::optional<ProtocolFrame> next();
  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::optional<ProtocolError> failed_;
};

}  // namespace falcon
