#pragma once

// Benchmark manifest: JSON lines, one image per line:
//   {"image":"...","spoof_type":"...","video":"...","masks":[{"trace":"...","path":"..."}]}
// Relative paths resolve against the manifest's directory.

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sptd/error.hpp"
#include "sptd/tensor_io.hpp"

namespace sptd {

struct TraceMask {
  std::string trace;
  std::string path;
};

struct ManifestEntry {
  std::string image;
  std::string spoof_type;
  std::string video;
  std::vector<TraceMask> masks;
};

struct BenchmarkManifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }
};

inline nlohmann::json to_json(const ManifestEntry& e) {
  nlohmann::json masks = nlohmann::json::array();
  for (const auto& m : e.masks) masks.push_back({{"trace", m.trace}, {"path", m.path}});
  return {{"image", e.image}, {"spoof_type", e.spoof_type}, {"video", e.video}, {"masks", masks}};
}

inline BenchmarkManifest parse_manifest(std::string_view text, std::filesystem::path base_dir) {
  BenchmarkManifest m;
  m.base_dir = std::move(base_dir);
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.image = j.at("image").get<std::string>();
      e.spoof_type = j.value("spoof_type", std::string());
      e.video = j.value("video", e.image);
      if (j.contains("masks"))
        for (const auto& mk : j.at("masks")) e.masks.push_back({mk.value("trace", std::string()), mk.at("path").get<std::string>()});
      m.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorCode::InvalidArgument, "manifest line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  if (m.entries.empty()) fail(ErrorCode::EmptyManifest, "manifest has no entries");
  return m;
}

inline BenchmarkManifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_file(path), path.parent_path());
}

inline std::string serialize_manifest(const BenchmarkManifest& m) {
  std::string out;
  for (const auto& e : m.entries) out += to_json(e).dump() + "\n";
  return out;
}

// Stable identifier of a manifest image: its path without extension, with
// directory separators replaced by '_'.
inline std::string image_id(const std::string& image_path) {
  std::filesystem::path p(image_path);
  std::string s = (p.parent_path() / p.stem()).generic_string();
  for (char& c : s)
    if (c == '/' || c == '\\' || c == ':') c = '_';
  while (!s.empty() && (s.front() == '.' || s.front() == '_')) s.erase(s.begin());
  return s.empty() ? "image" : s;
}

}  // namespace sptd
