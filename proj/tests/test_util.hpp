#pragma once

#include <filesystem>
#include <string>

#include "sptd/rng.hpp"
#include "sptd/tensor.hpp"

namespace testutil {

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("sptd_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline sptd::Tensor random_tensor(sptd::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  sptd::Tensor t(std::move(shape));
  sptd::CounterRng rng(seed);
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

}  // namespace testutil
