#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sptd/error.hpp"

namespace sptd {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(shape[i]);
  }
  return s;
}

// Dense row-major f32 tensor. The data length always equals the product of
// the shape entries and every dimension is positive.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_size(shape_))
      fail(ErrorCode::ShapeMismatch, "data length " + std::to_string(data_.size()) + " does not match shape [" +
                                         shape_string(shape_) + "]");
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  std::vector<float>& values() noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  // 2-D and 3-D element access, row-major.
  float& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  float& at(std::size_t i, std::size_t j, std::size_t k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
  float at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  float min_value() const { return data_.empty() ? 0.0f : *std::min_element(data_.begin(), data_.end()); }
  float max_value() const { return data_.empty() ? 0.0f : *std::max_element(data_.begin(), data_.end()); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void check_shape() const {
    if (shape_.empty()) fail(ErrorCode::ShapeMismatch, "tensor shape must have at least one dimension");
    for (auto d : shape_)
      if (d == 0) fail(ErrorCode::ShapeMismatch, "tensor dimensions must be positive: [" + shape_string(shape_) + "]");
  }

  Shape shape_;
  std::vector<float> data_;
};

// N x H x W x 3 images in [0, 1] with one id per image.
struct ImageBatch {
  Tensor tensor;
  std::vector<std::string> ids;

  std::size_t count() const { return tensor.dim(0); }
  std::size_t height() const { return tensor.dim(1); }
  std::size_t width() const { return tensor.dim(2); }
  std::size_t image_size() const { return height() * width() * 3; }

  std::span<const float> image(std::size_t i) const { return tensor.data().subspan(i * image_size(), image_size()); }
  std::span<float> image(std::size_t i) { return tensor.data().subspan(i * image_size(), image_size()); }

  // Copies image i into a batch of one.
  ImageBatch slice(std::size_t i) const {
    auto src = image(i);
    return {Tensor({1, height(), width(), 3}, std::vector<float>(src.begin(), src.end())), {ids.at(i)}};
  }

  void validate() const {
    if (tensor.rank() != 4 || tensor.dim(3) != 3)
      fail(ErrorCode::ShapeMismatch, "image batch must be N x H x W x 3, got [" + shape_string(tensor.shape()) + "]");
    if (height() < 8 || width() < 8) fail(ErrorCode::ShapeMismatch, "images must be at least 8 x 8");
    if (ids.size() != count()) fail(ErrorCode::ShapeMismatch, "image batch needs one id per image");
    for (float v : tensor.values())
      if (!(v >= 0.0f && v <= 1.0f)) fail(ErrorCode::NonFiniteValue, "image values must lie in [0, 1]");
  }
};

inline ImageBatch make_batch(Tensor images, std::vector<std::string> ids) {
  ImageBatch batch{std::move(images), std::move(ids)};
  batch.validate();
  return batch;
}

// H x W tensor with entries exactly 0 or 1.
class BinaryMask {
 public:
  BinaryMask() = default;
  explicit BinaryMask(Tensor t) : tensor_(std::move(t)) {
    if (tensor_.rank() != 2) fail(ErrorCode::ShapeMismatch, "mask must be H x W");
    for (float v : tensor_.values())
      if (v != 0.0f && v != 1.0f) fail(ErrorCode::InvalidMask, "mask entries must be exactly 0 or 1");
  }
  BinaryMask(std::size_t h, std::size_t w) : tensor_({h, w}, 0.0f) {}

  const Tensor& tensor() const noexcept { return tensor_; }
  std::size_t height() const { return tensor_.dim(0); }
  std::size_t width() const { return tensor_.dim(1); }
  std::size_t size() const { return tensor_.size(); }
  bool test(std::size_t i) const { return tensor_[i] != 0.0f; }
  void set(std::size_t i, bool on = true) { tensor_[i] = on ? 1.0f : 0.0f; }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(tensor_.values().begin(), tensor_.values().end(), 1.0f));
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  Tensor tensor_;
};

// Bilinear resampling of an H x W or H x W x C tensor with half-pixel-center
// sampling and edge clamping.
inline Tensor resize_bilinear(const Tensor& t, std::size_t out_h, std::size_t out_w) {
  if (t.empty() || (t.rank() != 2 && t.rank() != 3)) fail(ErrorCode::EmptyInput, "resize needs an H x W (x C) tensor");
  if (out_h == 0 || out_w == 0) fail(ErrorCode::InvalidArgument, "output dimensions must be >= 1");
  const std::size_t in_h = t.dim(0), in_w = t.dim(1);
  const std::size_t ch = t.rank() == 3 ? t.dim(2) : 1;
  if (in_h == out_h && in_w == out_w) return t;

  struct Tap {
    std::size_t i0, i1;
    double f;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> v(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      v[o] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
    }
    return v;
  };
  const auto ty = taps(in_h, out_h);
  const auto tx = taps(in_w, out_w);

  Shape shape = t.rank() == 3 ? Shape{out_h, out_w, ch} : Shape{out_h, out_w};
  Tensor out(shape);
  const auto src = t.data();
  auto px = [&](std::size_t y, std::size_t x, std::size_t c) { return static_cast<double>(src[(y * in_w + x) * ch + c]); };
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto& a = ty[y];
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto& b = tx[x];
      for (std::size_t c = 0; c < ch; ++c) {
        const double p00 = px(a.i0, b.i0, c), p01 = px(a.i0, b.i1, c);
        const double p10 = px(a.i1, b.i0, c), p11 = px(a.i1, b.i1, c);
        const double top = p00 + b.f * (p01 - p00);
        const double bot = p10 + b.f * (p11 - p10);
        out[(y * out_w + x) * ch + c] = static_cast<float>(top + a.f * (bot - top));
      }
    }
  }
  return out;
}

inline std::size_t top_fraction_count(std::size_t total, double x) {
  return static_cast<std::size_t>(std::llround(x * static_cast<double>(total)));
}

// Pixel indices ordered by descending value; ties keep ascending row-major
// order.
inline std::vector<std::size_t> rank_descending(std::span<const float> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  return order;
}

// Marks the round(x * H * W) largest heatmap values.
inline BinaryMask binarize_top_fraction(const Tensor& heatmap, double x) {
  if (heatmap.empty() || heatmap.rank() != 2) fail(ErrorCode::EmptyInput, "heatmap must be a non-empty H x W tensor");
  if (!(x > 0.0 && x <= 1.0)) fail(ErrorCode::FractionOutOfRange, "fraction must lie in (0, 1], got " + std::to_string(x));
  const std::size_t keep = top_fraction_count(heatmap.size(), x);
  const auto order = rank_descending(heatmap.data());
  BinaryMask mask(heatmap.dim(0), heatmap.dim(1));
  for (std::size_t i = 0; i < keep; ++i) mask.set(order[i]);
  return mask;
}

// Scales a non-negative map so its maximum is 1. Returns false (and leaves the
// map untouched) when the map is identically zero.
inline bool max_normalize(Tensor& t) {
  const float hi = t.max_value();
  if (!(hi > 0.0f)) return false;
  for (float& v : t.values()) v = std::clamp(v / hi, 0.0f, 1.0f);
  return true;
}

}  // namespace sptd
