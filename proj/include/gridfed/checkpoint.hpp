#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <vector>

#include "gridfed/bytes.hpp"
#include "gridfed/error.hpp"
#include "gridfed/nn.hpp"

namespace gridfed {

// Checkpoint layout (all integers little-endian):
//   "GFNN"            4 bytes magic
//   version           u16 (= 1)
//   segment_count     u32
//   per segment:      name_len u16 | name bytes | offset u64 | length u64 | partition u8 (0 shared, 1 personal)
//   value_count       u64
//   values            value_count x IEEE-754 binary64
inline constexpr std::uint16_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> encode_checkpoint(const ParamVector& pv) {
  pv.validate();
  ByteWriter w;
  w.put_string("GFNN");
  w.put_uint<std::uint16_t>(kCheckpointVersion);
  w.put_uint<std::uint32_t>(static_cast<std::uint32_t>(pv.layout.size()));
  for (const auto& seg : pv.layout) {
    require(seg.name.size() <= 0xFFFF, "segment name too long");
    w.put_uint<std::uint16_t>(static_cast<std::uint16_t>(seg.name.size()));
    w.put_string(seg.name);
    w.put_uint<std::uint64_t>(seg.offset);
    w.put_uint<std::uint64_t>(seg.length);
    w.put_uint<std::uint8_t>(static_cast<std::uint8_t>(seg.partition));
  }
  w.put_uint<std::uint64_t>(pv.values.size());
  for (double v : pv.values) {
    w.put_f64(v);
  }
  return w.take();
}

inline ParamVector decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.get_string(4, "magic") != "GFNN") {
    throw FramingError(0, "bad checkpoint magic");
  }
  const std::size_t version_at = r.offset();
  if (r.get_uint<std::uint16_t>("version") != kCheckpointVersion) {
    throw FramingError(version_at, "unsupported checkpoint version");
  }
  ParamVector pv;
  const auto n_segments = r.get_uint<std::uint32_t>("segment count");
  for (std::uint32_t i = 0; i < n_segments; ++i) {
    Segment seg;
    const auto name_len = r.get_uint<std::uint16_t>("segment name length");
    seg.name = r.get_string(name_len, "segment name");
    seg.offset = r.get_uint<std::uint64_t>("segment offset");
    seg.length = r.get_uint<std::uint64_t>("segment length");
    const std::size_t tag_at = r.offset();
    const auto tag = r.get_uint<std::uint8_t>("segment partition");
    if (tag > 1) {
      throw FramingError(tag_at, "unknown partition tag");
    }
    seg.partition = static_cast<Partition>(tag);
    pv.layout.push_back(std::move(seg));
  }
  const auto count = r.get_uint<std::uint64_t>("value count");
  if (count > r.remaining() / 8) {
    r.need(r.remaining() + 1, "value payload");
  }
  pv.values.resize(count);
  for (auto& v : pv.values) {
    v = r.get_f64("value");
  }
  if (r.remaining() != 0) {
    throw FramingError(r.offset(), "trailing bytes after checkpoint payload");
  }
  try {
    pv.validate();
  } catch (const ContractViolation& e) {
    throw FramingError(0, std::string("inconsistent segment table: ") + e.what());
  }
  return pv;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes to a sibling temp file, then renames over the target.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw std::runtime_error("cannot write " + tmp.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      throw std::runtime_error("write failed for " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline void save_checkpoint(const std::filesystem::path& path, const ParamVector& pv) {
  write_file_atomic(path, encode_checkpoint(pv));
}

inline ParamVector load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace gridfed
