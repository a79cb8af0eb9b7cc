#pragma once

// Minimal protobuf wire-format codec: enough to walk ONNX messages field by
// field and to emit them again.

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "sptd/error.hpp"

namespace sptd::pb {

enum class WireType : std::uint8_t { Varint = 0, Fixed64 = 1, Bytes = 2, Fixed32 = 5 };

struct Field {
  std::uint32_t number = 0;
  WireType type = WireType::Varint;
  std::uint64_t scalar = 0;    // varint / fixed payload
  std::string_view bytes;      // length-delimited payload
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  bool next(Field& f) {
    if (pos_ >= data_.size()) return false;
    const std::uint64_t key = varint();
    f.number = static_cast<std::uint32_t>(key >> 3);
    f.type = static_cast<WireType>(key & 7u);
    f.bytes = {};
    f.scalar = 0;
    switch (f.type) {
      case WireType::Varint:
        f.scalar = varint();
        break;
      case WireType::Fixed64:
        f.scalar = fixed(8);
        break;
      case WireType::Fixed32:
        f.scalar = fixed(4);
        break;
      case WireType::Bytes: {
        const std::uint64_t len = varint();
        if (len > data_.size() - pos_) bad("length-delimited field overruns buffer");
        f.bytes = data_.substr(pos_, static_cast<std::size_t>(len));
        pos_ += static_cast<std::size_t>(len);
        break;
      }
      default:
        bad("unsupported wire type " + std::to_string(static_cast<int>(f.type)));
    }
    return true;
  }

  std::uint64_t varint() {
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      if (pos_ >= data_.size()) bad("truncated varint");
      const auto b = static_cast<std::uint8_t>(data_[pos_++]);
      v |= static_cast<std::uint64_t>(b & 0x7fu) << shift;
      if (!(b & 0x80u)) return v;
    }
    bad("varint longer than 10 bytes");
  }

  bool done() const { return pos_ >= data_.size(); }

 private:
  std::uint64_t fixed(int n) {
    if (data_.size() - pos_ < static_cast<std::size_t>(n)) bad("truncated fixed-width field");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  [[noreturn]] static void bad(const std::string& what) { fail(ErrorCode::UnsupportedGraph, "protobuf: " + what); }

  std::string_view data_;
  std::size_t pos_ = 0;
};

inline float as_float(std::uint64_t bits) {
  const auto b = static_cast<std::uint32_t>(bits);
  float f;
  std::memcpy(&f, &b, 4);
  return f;
}

inline double as_double(std::uint64_t bits) {
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

class Writer {
 public:
  void varint(std::uint64_t v) {
    while (v >= 0x80) {
      out_.push_back(static_cast<char>((v & 0x7f) | 0x80));
      v >>= 7;
    }
    out_.push_back(static_cast<char>(v));
  }
  void tag(std::uint32_t number, WireType type) { varint((static_cast<std::uint64_t>(number) << 3) | static_cast<std::uint8_t>(type)); }
  void int_field(std::uint32_t number, std::int64_t v) {
    tag(number, WireType::Varint);
    varint(static_cast<std::uint64_t>(v));
  }
  void float_field(std::uint32_t number, float v) {
    tag(number, WireType::Fixed32);
    std::uint32_t b;
    std::memcpy(&b, &v, 4);
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((b >> (8 * i)) & 0xff));
  }
  void bytes_field(std::uint32_t number, std::string_view bytes) {
    tag(number, WireType::Bytes);
    varint(bytes.size());
    out_.append(bytes);
  }
  void message_field(std::uint32_t number, const Writer& sub) { bytes_field(number, sub.str()); }

  const std::string& str() const { return out_; }

 private:
  std::string out_;
};

}  // namespace sptd::pb
