#pragma once

// Binary checkpoint container.
//
//   magic "PSRPCKPT" | u32 version | u32 len, section tag
//   | u64 len, header text (sorted key=value lines)
//   | u64 count, f64 parameters | u64 count, f64 first moments
//   | u64 count, f64 second moments | u64 optimizer step
//   | u64 len, training-log tail | u32 CRC-32 of all preceding bytes
//
// All integers and floats are little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "psrp/error.hpp"
#include "psrp/kv.hpp"

namespace psrp {

struct Checkpoint {
  static constexpr std::string_view kMagic = "PSRPCKPT";
  static constexpr std::uint32_t kVersion = 1;

  std::string section;
  KeyValues header;
  std::vector<double> parameters;
  std::vector<double> moment1;
  std::vector<double> moment2;
  std::uint64_t optimizer_step = 0;
  std::string log_tail;

  const std::string& at(const std::string& key) const {
    const auto it = header.find(key);
    if (it == header.end()) throw CheckpointError("checkpoint header lacks '" + key + "'");
    return it->second;
  }

  bool operator==(const Checkpoint&) const = default;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64s(const std::vector<double>& xs) {
    u64(xs.size());
    for (double x : xs) u64(std::bit_cast<std::uint64_t>(x));
  }
  void bytes(std::string_view s) { out_.append(s); }
  void text64(std::string_view s) {
    u64(s.size());
    bytes(s);
  }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<unsigned char>(data_[pos_++])} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<unsigned char>(data_[pos_++])} << (8 * i);
    return v;
  }
  std::vector<double> f64s() {
    const auto count = u64();
    if (count > remaining() / 8) throw CheckpointError("checkpoint: float block overruns file");
    std::vector<double> xs(count);
    for (auto& x : xs) x = std::bit_cast<double>(u64());
    return xs;
  }
  std::string bytes(std::size_t count) {
    need(count);
    std::string s(data_.substr(pos_, count));
    pos_ += count;
    return s;
  }
  std::string text64() { return bytes(u64()); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t count) const {
    if (count > remaining()) throw CheckpointError("checkpoint: unexpected end of data");
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::string_view data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size()));
  return static_cast<std::uint32_t>(crc);
}

inline std::string header_text(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw CheckpointError("checkpoint header entry '" + k + "' contains a reserved character");
    }
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

inline KeyValues parse_header_text(std::string_view text) {
  KeyValues kv;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(start, end - start);
    start = end + 1;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw CheckpointError("checkpoint: malformed header line");
    kv.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
  }
  return kv;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  w.bytes(Checkpoint::kMagic);
  w.u32(Checkpoint::kVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.section.size()));
  w.bytes(ckpt.section);
  w.text64(detail::header_text(ckpt.header));
  w.f64s(ckpt.parameters);
  w.f64s(ckpt.moment1);
  w.f64s(ckpt.moment2);
  w.u64(ckpt.optimizer_step);
  w.text64(ckpt.log_tail);
  const auto crc = detail::crc32_of(w.str());
  w.u32(crc);
  return std::move(w.str());
}

inline Checkpoint deserialize_checkpoint(std::string_view data) {
  if (data.size() < Checkpoint::kMagic.size() + 8 ||
      data.substr(0, Checkpoint::kMagic.size()) != Checkpoint::kMagic) {
    throw CheckpointError("checkpoint: bad magic bytes");
  }
  detail::ByteReader head(data.substr(Checkpoint::kMagic.size()));
  const auto version = head.u32();
  if (version != Checkpoint::kVersion) {
    throw CheckpointError("checkpoint: format version " + std::to_string(version) +
                          ", expected " + std::to_string(Checkpoint::kVersion));
  }
  const auto body = data.substr(0, data.size() - 4);
  detail::ByteReader tail(data.substr(data.size() - 4));
  if (tail.u32() != detail::crc32_of(body)) {
    throw CheckpointError("checkpoint: checksum mismatch (file truncated or corrupted)");
  }

  detail::ByteReader r(body.substr(Checkpoint::kMagic.size() + 4));
  Checkpoint ckpt;
  ckpt.section = r.bytes(r.u32());
  ckpt.header = detail::parse_header_text(r.text64());
  ckpt.parameters = r.f64s();
  ckpt.moment1 = r.f64s();
  ckpt.moment2 = r.f64s();
  ckpt.optimizer_step = r.u64();
  ckpt.log_tail = r.text64();
  if (r.remaining() != 0) throw CheckpointError("checkpoint: trailing bytes before checksum");
  return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace psrp
