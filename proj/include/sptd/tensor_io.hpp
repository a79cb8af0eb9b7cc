#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "sptd/error.hpp"
#include "sptd/tensor.hpp"

namespace sptd {

// Portable ".f32t" tensor file: a single UTF-8 header line
// "F32T v1 dims=<d1,d2,...>\n" followed by the little-endian f32 payload.

inline std::string encode_tensor(const Tensor& t) {
  if (!t.all_finite()) fail(ErrorCode::NonFiniteValue, "refusing to serialize a tensor with NaN/Inf values");
  std::string out = "F32T v1 dims=" + shape_string(t.shape()) + "\n";
  const std::size_t header = out.size();
  out.resize(header + 4 * t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(t[i]);
    for (int b = 0; b < 4; ++b) out[header + 4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  return out;
}

inline Tensor decode_tensor(std::string_view bytes) {
  constexpr std::string_view magic = "F32T v1 dims=";
  const auto eol = bytes.find('\n');
  if (eol == std::string_view::npos || bytes.substr(0, magic.size()) != magic)
    fail(ErrorCode::MalformedHeader, "missing 'F32T v1 dims=' header line");
  std::string_view dims = bytes.substr(magic.size(), eol - magic.size());
  Shape shape;
  while (!dims.empty()) {
    const auto comma = dims.find(',');
    const auto token = dims.substr(0, comma);
    std::size_t value = 0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc{} || ptr != token.data() + token.size() || value == 0)
      fail(ErrorCode::MalformedHeader, "bad dimension '" + std::string(token) + "'");
    shape.push_back(value);
    if (comma == std::string_view::npos) break;
    dims.remove_prefix(comma + 1);
    if (dims.empty()) fail(ErrorCode::MalformedHeader, "trailing comma in dims");
  }
  if (shape.empty()) fail(ErrorCode::MalformedHeader, "no dimensions declared");

  const auto payload = bytes.substr(eol + 1);
  const std::size_t count = shape_size(shape);
  if (payload.size() != 4 * count)
    fail(ErrorCode::PayloadLengthMismatch, "header declares " + std::to_string(4 * count) + " payload bytes, file has " +
                                               std::to_string(payload.size()));
  std::vector<float> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[4 * i + b])) << (8 * b);
    data[i] = std::bit_cast<float>(bits);
    if (!std::isfinite(data[i])) fail(ErrorCode::NonFiniteValue, "payload value " + std::to_string(i) + " is not finite");
  }
  return Tensor(std::move(shape), std::move(data));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

inline Tensor load_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path)); }

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) { write_file(path, encode_tensor(t)); }

}  // namespace sptd
