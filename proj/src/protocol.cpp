#include "falcon/protocol.hpp"

#include <cstring>

namespace falcon {

std::optional<MsgType> msg_type_from_code(std::uint8_t code) {
  for (MsgType t : kAllMsgTypes)
    if (static_cast<std::uint8_t>(t) == code) return t;
  return std::nullopt;
}

const char* to_string(MsgType t) {
  switch (t) {
    case MsgType::hello: return "HELLO";
    case MsgType::hello_ack: return "HELLO_ACK";
    case MsgType::capture_begin: return "CAPTURE_BEGIN";
    case MsgType::capture_frame: return "CAPTURE_FRAME";
    case MsgType::capture_end: return "CAPTURE_END";
    case MsgType::select_asset: return "SELECT_ASSET";
    case MsgType::progress: return "PROGRESS";
    case MsgType::model_ready: return "MODEL_READY";
    case MsgType::model_download: return "MODEL_DOWNLOAD";
    case MsgType::infer_request: return "INFER_REQUEST";
    case MsgType::infer_response: return "INFER_RESPONSE";
    case MsgType::render_and_infer: return "RENDER_AND_INFER";
    case MsgType::render_result: return "RENDER_RESULT";
    case MsgType::error: return "ERROR";
  }
  return "UNKNOWN";
}

const char* to_string(ProtocolErrorKind k) {
  switch (k) {
    case ProtocolErrorKind::bad_magic: return "bad_magic";
    case ProtocolErrorKind::unknown_version: return "unknown_version";
    case ProtocolErrorKind::unknown_type: return "unknown_type";
    case ProtocolErrorKind::oversize: return "oversize";
    case ProtocolErrorKind::bad_header: return "bad_header";
  }
  return "protocol error";
}

ProtocolFrame ProtocolFrame::make(MsgType type, const nlohmann::json& header, std::vector<std::uint8_t> blob) {
  return {type, header.dump(), std::move(blob)};
}

nlohmann::json ProtocolFrame::header_json() const {
  auto j = nlohmann::json::parse(header, nullptr, false);
  if (j.is_discarded()) throw ProtocolError(ProtocolErrorKind::bad_header, "frame header is not valid JSON");
  return j;
}

namespace {

constexpr std::uint8_t kMagic[4] = {'F', 'A', 'L', 'C'};

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::uint32_t get_be32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

bool valid_header(const std::uint8_t* p, std::size_t n) {
  const auto j = nlohmann::json::parse(p, p + n, nullptr, false);
  return !j.is_discarded() && j.is_object();
}

DecodeResult fail(ProtocolErrorKind k, std::string msg) {
  DecodeResult r;
  r.status = DecodeResult::Status::error;
  r.error = k;
  r.message = std::move(msg);
  return r;
}

}  // namespace

std::vector<std::uint8_t> encode_frame(const ProtocolFrame& f) {
  const std::size_t total = kFrameOverhead + f.header.size() + f.blob.size();
  if (total > kMaxFrameBytes)
    throw ProtocolError(ProtocolErrorKind::oversize, "frame of " + std::to_string(total) + " bytes exceeds the cap");
  if (!msg_type_from_code(static_cast<std::uint8_t>(f.type)))
    throw ProtocolError(ProtocolErrorKind::unknown_type, "unknown message type");
  if (!valid_header(reinterpret_cast<const std::uint8_t*>(f.header.data()), f.header.size()))
    throw ProtocolError(ProtocolErrorKind::bad_header, "frame header must be a JSON object");
  std::vector<std::uint8_t> out;
  out.reserve(total);
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(kProtocolVersion);
  out.push_back(static_cast<std::uint8_t>(f.type));
  put_be32(out, static_cast<std::uint32_t>(f.header.size()));
  out.insert(out.end(), f.header.begin(), f.header.end());
  put_be32(out, static_cast<std::uint32_t>(f.blob.size()));
  out.insert(out.end(), f.blob.begin(), f.blob.end());
  return out;
}

DecodeResult decode_frame(std::span<const std::uint8_t> b) {
  const std::size_t n = b.size();
  if (n == 0) return {};
  const std::size_t m = std::min<std::size_t>(n, 4);
  if (std::memcmp(b.data(), kMagic, m) != 0) return fail(ProtocolErrorKind::bad_magic, "bad magic");
  if (n < 5) return {};
  if (b[4] != kProtocolVersion)
    return fail(ProtocolErrorKind::unknown_version, "unknown protocol version " + std::to_string(b[4]));
  if (n < 6) return {};
  const auto type = msg_type_from_code(b[5]);
  if (!type) return fail(ProtocolErrorKind::unknown_type, "unknown message type " + std::to_string(b[5]));
  if (n < 10) return {};
  const std::size_t header_len = get_be32(b.data() + 6);
  if (header_len > kMaxFrameBytes - kFrameOverhead)
    return fail(ProtocolErrorKind::oversize, "header length " + std::to_string(header_len) + " exceeds the cap");
  if (n < 10 + header_len + 4) return {};
  const std::size_t blob_len = get_be32(b.data() + 10 + header_len);
  if (kFrameOverhead + header_len + blob_len > kMaxFrameBytes)
    return fail(ProtocolErrorKind::oversize, "frame length exceeds the cap");
  const std::size_t total = kFrameOverhead + header_len + blob_len;
  if (n < total) return {};
  const std::uint8_t* hp = b.data() + 10;
  if (!valid_header(hp, header_len)) return fail(ProtocolErrorKind::bad_header, "frame header must be a JSON object");
  DecodeResult r;
  r.status = DecodeResult::Status::frame;
  r.consumed = total;
  r.frame.type = *type;
  r.frame.header.assign(reinterpret_cast<const char*>(hp), header_len);
  r.frame.blob.assign(hp + header_len + 4, hp + header_len + 4 + blob_len);
  return r;
}

void FrameDecoder::feed(std::span<const std::uint8_t> bytes) {
  if (pos_ > 0 && pos_ >= buf_.size() / 2) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<ProtocolFrame> FrameDecoder::next() {
  if (failed_) throw *failed_;
  if (pos_ == buf_.size()) return std::nullopt;
  DecodeResult r = decode_frame(std::span<const std::uint8_t>(buf_).subspan(pos_));
  switch (r.status) {
    case DecodeResult::Status::need_more_data: return std::nullopt;
    case DecodeResult::Status::error:
      failed_.emplace(r.error, r.message);
      throw *failed_;
    case DecodeResult::Status::frame: break;
  }
  pos_ += r.consumed;
  return std::move(r.frame);
}

}  // namespace falcon
