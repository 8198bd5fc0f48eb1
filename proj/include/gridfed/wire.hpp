#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gridfed/bytes.hpp"
#include "gridfed/error.hpp"

namespace gridfed {

// Frame layout, little-endian, 17-byte header:
//   offset 0   magic       "GFED"
//   offset 4   version     u16 (= 1)
//   offset 6   msg_type    u8
//   offset 7   round       u32
//   offset 11  client_id   u16
//   offset 13  payload_len u32, in bytes, a multiple of 8
//   offset 17  payload     payload_len / 8 IEEE-754 binary64 values
enum class MessageType : std::uint8_t { Hello = 1, Broadcast = 2, Update = 3, RoundDone = 4, Shutdown = 5 };

inline constexpr std::uint16_t kWireVersion = 1;
inline constexpr std::size_t kFrameHeaderSize = 17;
inline constexpr std::uint32_t kMaxPayloadBytes = 64u << 20;

struct Message {
  MessageType type = MessageType::Hello;
  std::uint32_t round = 0;
  std::uint16_t client_id = 0;
  std::vector<double> payload;

  bool operator==(const Message&) const = default;
};

inline std::vector<std::uint8_t> encode_message(const Message& m) {
  require(m.payload.size() * 8 <= kMaxPayloadBytes, "payload too large for one frame");
  ByteWriter w;
  w.put_string("GFED");
  w.put_uint<std::uint16_t>(kWireVersion);
  w.put_uint<std::uint8_t>(static_cast<std::uint8_t>(m.type));
  w.put_uint<std::uint32_t>(m.round);
  w.put_uint<std::uint16_t>(m.client_id);
  w.put_uint<std::uint32_t>(static_cast<std::uint32_t>(m.payload.size() * 8));
  for (double v : m.payload) w.put_f64(v);
  return w.take();
}

struct FrameHeader {
  MessageType type;
  std::uint32_t round;
  std::uint16_t client_id;
  std::uint32_t payload_len;
};

// Validates and parses the fixed header. `bytes` must hold at least kFrameHeaderSize bytes.
inline FrameHeader decode_header(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.get_string(4, "frame magic") != "GFED") {
    throw FramingError(0, "bad frame magic");
  }
  if (r.get_uint<std::uint16_t>("frame version") != kWireVersion) {
    throw FramingError(4, "unsupported frame version");
  }
  const auto type = r.get_uint<std::uint8_t>("message type");
  if (type < 1 || type > 5) {
    throw FramingError(6, "unknown message type " + std::to_string(type));
  }
  FrameHeader h{static_cast<MessageType>(type), 0, 0, 0};
  h.round = r.get_uint<std::uint32_t>("round");
  h.client_id = r.get_uint<std::uint16_t>("client id");
  h.payload_len = r.get_uint<std::uint32_t>("payload length");
  if (h.payload_len % 8 != 0) {
    throw FramingError(13, "payload length " + std::to_string(h.payload_len) + " is not a multiple of 8");
  }
  if (h.payload_len > kMaxPayloadBytes) {
    throw FramingError(13, "payload length " + std::to_string(h.payload_len) + " exceeds the frame limit");
  }
  return h;
}

inline std::vector<double> decode_payload(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  std::vector<double> out(bytes.size() / 8);
  for (auto& v : out) v = r.get_f64("payload value");
  return out;
}

// Decodes exactly one frame occupying all of `bytes`.
inline Message decode_message(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFrameHeaderSize) {
    throw FramingError(bytes.size(), "truncated frame header: expected " + std::to_string(kFrameHeaderSize) +
                                         " bytes, " + std::to_string(bytes.size()) + " available");
  }
  const FrameHeader h = decode_header(bytes);
  const std::size_t available = bytes.size() - kFrameHeaderSize;
  if (h.payload_len > available) {
    throw FramingError(kFrameHeaderSize, "truncated payload: expected " + std::to_string(h.payload_len) +
                                             " bytes, " + std::to_string(available) + " available");
  }
  if (h.payload_len < available) {
    throw FramingError(kFrameHeaderSize + h.payload_len, "trailing bytes after frame payload");
  }
  return {h.type, h.round, h.client_id, decode_payload(bytes.subspan(kFrameHeaderSize))};
}

// Incremental decoder for a byte stream carrying back-to-back frames.
class FrameDecoder {
 public:
  void feed(std::span<const std::uint8_t> bytes) { buffer_.insert(buffer_.end(), bytes.begin(), bytes.end()); }

  std::optional<Message> next() {
    if (buffer_.size() < kFrameHeaderSize) return std::nullopt;
    const FrameHeader h = decode_header(buffer_);
    const std::size_t total = kFrameHeaderSize + h.payload_len;
    if (buffer_.size() < total) return std::nullopt;
    Message m{h.type, h.round, h.client_id,
              decode_payload(std::span(buffer_).subspan(kFrameHeaderSize, h.payload_len))};
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(total));
    return m;
  }

  std::size_t buffered() const noexcept { return buffer_.size(); }

 private:
  std::vector<std::uint8_t> buffer_;
};

}  // namespace gridfed
