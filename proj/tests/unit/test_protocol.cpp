#include <doctest.h>

#include "falcon/protocol.hpp"
#include "falcon/rng.hpp"

using namespace falcon;
using Bytes = std::vector<std::uint8_t>;

namespace {

ProtocolFrame sample_frame(MsgType t, std::size_t blob_size, std::uint64_t seed) {
  Rng rng(seed);
  Bytes blob(blob_size);
  for (auto& b : blob) b = static_cast<std::uint8_t>(rng.below(256));
  return ProtocolFrame::make(t, {{"request_id", seed}, {"note", "x"}}, blob);
}

}  // namespace

TEST_CASE("HELLO encodes to the documented bytes") {
  const ProtocolFrame hello{MsgType::hello, "{}", {}};
  const Bytes expected = {'F', 'A', 'L', 'C', 1, 0x01, 0, 0, 0, 2, '{', '}', 0, 0, 0, 0};
  CHECK(encode_frame(hello) == expected);
  const DecodeResult r = decode_frame(expected);
  REQUIRE(r.status == DecodeResult::Status::frame);
  CHECK(r.frame == hello);
  CHECK(r.consumed == expected.size());
}

TEST_CASE("big-endian lengths") {
  ProtocolFrame f{MsgType::infer_request, "{\"a\":1}", Bytes(0x0102, 7)};
  const Bytes b = encode_frame(f);
  CHECK(b[6] == 0);
  CHECK(b[9] == 7);
  const std::size_t blob_len_at = 10 + 7;
  CHECK(b[blob_len_at + 2] == 0x01);
  CHECK(b[blob_len_at + 3] == 0x02);
  CHECK(b.size() == kFrameOverhead + 7 + 0x0102);
}

TEST_CASE("round trip for every message type") {
  for (MsgType t : kAllMsgTypes) {
    const ProtocolFrame f = sample_frame(t, static_cast<std::size_t>(t) * 3, static_cast<std::uint64_t>(t));
    const Bytes b = encode_frame(f);
    const DecodeResult r = decode_frame(b);
    REQUIRE(r.status == DecodeResult::Status::frame);
    CHECK(r.frame == f);
    CHECK(encode_frame(r.frame) == b);
    CHECK(msg_type_from_code(static_cast<std::uint8_t>(t)) == t);
    CHECK(std::string(to_string(t)).size() > 0);
  }
  CHECK_FALSE(msg_type_from_code(0x00).has_value());
  CHECK_FALSE(msg_type_from_code(0x14).has_value());
}

TEST_CASE("header text is kept verbatim") {
  const ProtocolFrame f{MsgType::progress, "{ \"stage\" : \"training\",\"fraction\":0.5 }", {}};
  const DecodeResult r = decode_frame(encode_frame(f));
  REQUIRE(r.status == DecodeResult::Status::frame);
  CHECK(r.frame.header == f.header);
  CHECK(r.frame.header_json()["fraction"] == 0.5);
}

TEST_CASE("every truncation needs more data") {
  const Bytes b = encode_frame(sample_frame(MsgType::capture_frame, 40, 3));
  for (std::size_t n = 0; n < b.size(); ++n) {
    const DecodeResult r = decode_frame(std::span<const std::uint8_t>(b.data(), n));
    CAPTURE(n);
    CHECK(r.status == DecodeResult::Status::need_more_data);
    CHECK(r.consumed == 0);
  }
}

TEST_CASE("decoder consumes exactly one frame") {
  Bytes two = encode_frame(sample_frame(MsgType::hello, 3, 1));
  const std::size_t first = two.size();
  const Bytes second = encode_frame(sample_frame(MsgType::error, 5, 2));
  two.insert(two.end(), second.begin(), second.end());
  const DecodeResult r = decode_frame(two);
  REQUIRE(r.status == DecodeResult::Status::frame);
  CHECK(r.consumed == first);
  const DecodeResult r2 = decode_frame(std::span<const std::uint8_t>(two).subspan(first));
  REQUIRE(r2.status == DecodeResult::Status::frame);
  CHECK(r2.frame.type == MsgType::error);
}

TEST_CASE("malformed prefixes") {
  auto err = [](const Bytes& b) {
    const DecodeResult r = decode_frame(b);
    REQUIRE(r.status == DecodeResult::Status::error);
    CHECK_FALSE(r.message.empty());
    return r.error;
  };
  const Bytes good = encode_frame(sample_frame(MsgType::hello, 0, 1));
  Bytes b = good;
  std::copy_n("XXXX", 4, b.begin());
  CHECK(err(b) == ProtocolErrorKind::bad_magic);
  CHECK(err(Bytes{'X'}) == ProtocolErrorKind::bad_magic);
  CHECK(err(Bytes{'F', 'A', 'L', 'X'}) == ProtocolErrorKind::bad_magic);
  b = good;
  b[4] = 2;
  CHECK(err(b) == ProtocolErrorKind::unknown_version);
  b = good;
  b[5] = 0x55;
  CHECK(err(b) == ProtocolErrorKind::unknown_type);
  b = good;
  b[6] = 0x01;  // header length 16 MiB + ...
  b[7] = 0x00;
  CHECK(err(b) == ProtocolErrorKind::oversize);
  const ProtocolFrame bad_json{MsgType::hello, "{nope", {}};
  Bytes raw = {'F', 'A', 'L', 'C', 1, 1, 0, 0, 0, 5};
  raw.insert(raw.end(), bad_json.header.begin(), bad_json.header.end());
  raw.insert(raw.end(), {0, 0, 0, 0});
  CHECK(err(raw) == ProtocolErrorKind::bad_header);
  Bytes arr = {'F', 'A', 'L', 'C', 1, 1, 0, 0, 0, 2, '[', ']', 0, 0, 0, 0};
  CHECK(err(arr) == ProtocolErrorKind::bad_header);
}

TEST_CASE("encoder validates its input") {
  CHECK_THROWS_AS(encode_frame(ProtocolFrame{MsgType::hello, "not json", {}}), ProtocolError);
  ProtocolFrame big{MsgType::infer_request, "{}", Bytes(kMaxFrameBytes, 0)};
  CHECK_THROWS_AS(encode_frame(big), ProtocolError);
  big.blob.resize(kMaxFrameBytes - kFrameOverhead - 2);
  CHECK(encode_frame(big).size() == kMaxFrameBytes);
}

TEST_CASE("incremental decoder over a byte stream") {
  std::vector<ProtocolFrame> sent;
  Bytes stream;
  for (std::uint64_t i = 0; i < 20; ++i) {
    sent.push_back(sample_frame(kAllMsgTypes[i % std::size(kAllMsgTypes)], i * 7, i));
    const Bytes b = encode_frame(sent.back());
    stream.insert(stream.end(), b.begin(), b.end());
  }
  FrameDecoder dec;
  std::vector<ProtocolFrame> got;
  Rng rng(4);
  std::size_t pos = 0;
  while (pos < stream.size()) {
    const std::size_t n = std::min<std::size_t>(stream.size() - pos, 1 + rng.below(13));
    dec.feed(std::span<const std::uint8_t>(stream).subspan(pos, n));
    pos += n;
    while (auto f = dec.next()) got.push_back(*f);
  }
  CHECK(got == sent);
  CHECK(dec.buffered() == 0);

  FrameDecoder broken;
  broken.feed(Bytes{'N', 'O', 'P', 'E'});
  CHECK_THROWS_AS(broken.next(), ProtocolError);
  broken.feed(encode_frame(sent[0]));
  CHECK_THROWS_AS(broken.next(), ProtocolError);
}

TEST_CASE("fuzz: random and mutated inputs never crash or over-read") {
  Rng rng(99);
  const Bytes valid = encode_frame(sample_frame(MsgType::infer_request, 30, 5));
  for (int it = 0; it < 20000; ++it) {
    Bytes b;
    if (it % 2 == 0) {
      b.resize(rng.below(64));
      for (auto& x : b) x = static_cast<std::uint8_t>(rng.below(256));
      if (b.size() >= 4 && rng.below(2)) std::copy_n("FALC", 4, b.begin());
    } else {
      b = valid;
      const int flips = 1 + static_cast<int>(rng.below(4));
      for (int k = 0; k < flips; ++k) b[rng.below(b.size())] = static_cast<std::uint8_t>(rng.below(256));
      b.resize(rng.below(b.size() + 1));
    }
    const DecodeResult r = decode_frame(b);
    if (r.status == DecodeResult::Status::frame) {
      CHECK(r.consumed <= b.size());
      CHECK(encode_frame(r.frame).size() == r.consumed);
    } else {
      CHECK(r.consumed == 0);
    }
  }
}
