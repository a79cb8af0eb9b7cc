#pragma once

// Split classifier f = h(g(x)): g maps images to channel-last activation
// maps, h maps activations to logits. Backed either by a pair of ONNX graphs
// or by in-process functions (see planted.hpp).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sptd/error.hpp"
#include "sptd/onnx/model.hpp"
#include "sptd/onnx/runtime.hpp"
#include "sptd/tensor.hpp"
#include "sptd/tensor_io.hpp"

namespace sptd {

// N x h x w x C activations at the split point.
struct ActivationBatch {
  Tensor tensor;

  std::size_t count() const { return tensor.dim(0); }
  std::size_t height() const { return tensor.dim(1); }
  std::size_t width() const { return tensor.dim(2); }
  std::size_t channels() const { return tensor.dim(3); }
  std::size_t positions() const { return height() * width(); }
};

class SplitModel {
 public:
  // g: N x H x W x 3 images at input dims -> N x h x w x C.
  using FeatureFn = std::function<Tensor(const Tensor&)>;
  // h: N x h x w x C -> N x num_classes logits.
  using HeadFn = std::function<Tensor(const Tensor&)>;

  struct Layout {
    std::size_t input_h = 0, input_w = 0;
    std::size_t act_h = 0, act_w = 0, channels = 0;
    std::size_t num_classes = 0;
    std::size_t spoof_class_index = 0;
  };

  SplitModel(FeatureFn g, HeadFn h, Layout layout) : g_(std::move(g)), h_(std::move(h)), layout_(layout) {
    if (layout_.num_classes < 1 || layout_.spoof_class_index >= layout_.num_classes)
      fail(ErrorCode::UnsupportedGraph, "spoof_class_index " + std::to_string(layout_.spoof_class_index) +
                                            " out of range for " + std::to_string(layout_.num_classes) + " classes");
  }

  const Layout& layout() const { return layout_; }
  std::size_t input_h() const { return layout_.input_h; }
  std::size_t input_w() const { return layout_.input_w; }
  std::size_t channels() const { return layout_.channels; }
  std::size_t num_classes() const { return layout_.num_classes; }
  std::size_t spoof_class_index() const { return layout_.spoof_class_index; }

  // Images whose dims differ from the input dims are resized first.
  ActivationBatch features(const Tensor& images) const {
    if (images.rank() != 4 || images.dim(3) != 3)
      fail(ErrorCode::ShapeMismatch, "features expects N x H x W x 3, got [" + shape_string(images.shape()) + "]");
    Tensor input = images;
    if (images.dim(1) != layout_.input_h || images.dim(2) != layout_.input_w) {
      const std::size_t n = images.dim(0), sz = images.dim(1) * images.dim(2) * 3;
      Tensor resized({n, layout_.input_h, layout_.input_w, 3});
      const std::size_t out_sz = layout_.input_h * layout_.input_w * 3;
      for (std::size_t i = 0; i < n; ++i) {
        Tensor one({images.dim(1), images.dim(2), 3},
                   std::vector<float>(images.values().begin() + static_cast<std::ptrdiff_t>(i * sz),
                                      images.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * sz)));
        const Tensor r = resize_bilinear(one, layout_.input_h, layout_.input_w);
        std::copy(r.values().begin(), r.values().end(), resized.values().begin() + static_cast<std::ptrdiff_t>(i * out_sz));
      }
      input = std::move(resized);
    }
    Tensor acts = g_(input);
    const Shape expect{images.dim(0), layout_.act_h, layout_.act_w, layout_.channels};
    if (acts.shape() != expect)
      fail(ErrorCode::ShapeMismatch, "feature function returned [" + shape_string(acts.shape()) + "], expected [" +
                                         shape_string(expect) + "]");
    if (!acts.all_finite()) fail(ErrorCode::NonFiniteInput, "feature function produced NaN/Inf");
    return {std::move(acts)};
  }
  ActivationBatch features(const ImageBatch& images) const { return features(images.tensor); }

  Tensor head(const ActivationBatch& acts) const {
    if (acts.tensor.rank() != 4 || acts.channels() != layout_.channels || acts.height() != layout_.act_h ||
        acts.width() != layout_.act_w)
      fail(ErrorCode::ChannelMismatch, "activation batch [" + shape_string(acts.tensor.shape()) +
                                           "] does not match the split layer");
    Tensor logits = h_(acts.tensor);
    if (logits.rank() != 2 || logits.dim(0) != acts.count() || logits.dim(1) != layout_.num_classes)
      fail(ErrorCode::ShapeMismatch, "head returned [" + shape_string(logits.shape()) + "]");
    return logits;
  }

  Tensor predict(const Tensor& images) const { return head(features(images)); }
  Tensor predict(const ImageBatch& images) const { return predict(images.tensor); }

 private:
  FeatureFn g_;
  HeadFn h_;
  Layout layout_;
};

inline std::vector<double> softmax(std::span<const float> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += p[i] = std::exp(static_cast<double>(logits[i]) - mx);
  for (double& v : p) v /= sum;
  return p;
}

// Softmax probability of class c for every row of an N x classes logit tensor.
inline std::vector<double> class_probabilities(const Tensor& logits, std::size_t c) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = softmax(logits.data().subspan(i * k, k))[c];
  return out;
}

// ---------------------------------------------------------------------------
// ONNX-backed split models

struct SplitMeta {
  std::size_t input_h = 0, input_w = 0;
  std::string activation_layout = "NCHW";
  std::string input_layout = "NCHW";
  std::size_t num_classes = 0;
  std::size_t spoof_class_index = 0;

  static SplitMeta from_json(const nlohmann::json& j) {
    SplitMeta m;
    try {
      const auto& in = j.at("input");
      if (!in.is_array() || in.size() != 2) fail(ErrorCode::UnsupportedGraph, "meta 'input' must be [H, W]");
      m.input_h = in[0].get<std::size_t>();
      m.input_w = in[1].get<std::size_t>();
      m.activation_layout = j.value("activation_layout", std::string("NCHW"));
      m.input_layout = j.value("input_layout", std::string("NCHW"));
      m.num_classes = j.at("num_classes").get<std::size_t>();
      m.spoof_class_index = j.at("spoof_class_index").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::UnsupportedGraph, std::string("bad model meta: ") + e.what());
    }
    for (const auto* l : {&m.activation_layout, &m.input_layout})
      if (*l != "NCHW" && *l != "NHWC") fail(ErrorCode::UnsupportedGraph, "layout must be NCHW or NHWC, got " + *l);
    if (m.input_h < 8 || m.input_w < 8) fail(ErrorCode::UnsupportedGraph, "meta input dims must be at least 8");
    if (m.spoof_class_index >= m.num_classes)
      fail(ErrorCode::UnsupportedGraph, "spoof_class_index " + std::to_string(m.spoof_class_index) +
                                            " >= num_classes " + std::to_string(m.num_classes));
    return m;
  }

  nlohmann::json to_json() const {
    return {{"input", {input_h, input_w}},
            {"activation_layout", activation_layout},
            {"input_layout", input_layout},
            {"num_classes", num_classes},
            {"spoof_class_index", spoof_class_index}};
  }
};

namespace detail {

// NHWC <-> NCHW for a rank-4 float buffer.
inline std::vector<float> nhwc_to_nchw(std::span<const float> src, std::size_t n, std::size_t h, std::size_t w,
                                       std::size_t c) {
  std::vector<float> dst(src.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t k = 0; k < c; ++k) dst[((b * c + k) * h + y) * w + x] = src[((b * h + y) * w + x) * c + k];
  return dst;
}

inline std::vector<float> nchw_to_nhwc(std::span<const float> src, std::size_t n, std::size_t c, std::size_t h,
                                       std::size_t w) {
  std::vector<float> dst(src.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) dst[((b * h + y) * w + x) * c + k] = src[((b * c + k) * h + y) * w + x];
  return dst;
}

inline std::shared_ptr<const onnx::GraphRunner> load_graph(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) fail(ErrorCode::UnsupportedGraph, "cannot open model file " + path.string());
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const Error&) {
    fail(ErrorCode::UnsupportedGraph, "cannot read model file " + path.string());
  }
  return std::make_shared<const onnx::GraphRunner>(onnx::parse_model(bytes));
}

// Runs a graph image by image (exported graphs often fix the batch at 1).
inline std::vector<onnx::Value> run_per_item(const onnx::GraphRunner& runner, std::span<const float> data,
                                             std::size_t n, const std::vector<std::int64_t>& item_dims) {
  std::size_t item = 1;
  for (auto d : item_dims) item *= static_cast<std::size_t>(d);
  std::vector<onnx::Value> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::int64_t> dims{1};
    dims.insert(dims.end(), item_dims.begin(), item_dims.end());
    out.push_back(runner.run(onnx::Value::floats(dims, std::vector<float>(data.begin() + static_cast<std::ptrdiff_t>(i * item),
                                                                          data.begin() + static_cast<std::ptrdiff_t>((i + 1) * item)))));
  }
  return out;
}

}  // namespace detail

// Loads g and h graphs plus meta JSON. The split shape is discovered by
// running g once on a black image and checked against h's declared input.
inline SplitModel load_split_model(const std::filesystem::path& g_path, const std::filesystem::path& h_path,
                                   const std::filesystem::path& meta_path) {
  nlohmann::json meta_json;
  try {
    meta_json = nlohmann::json::parse(read_file(meta_path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::UnsupportedGraph, "cannot parse model meta " + meta_path.string() + ": " + e.what());
  } catch (const Error&) {
    fail(ErrorCode::UnsupportedGraph, "cannot read model meta " + meta_path.string());
  }
  const SplitMeta meta = SplitMeta::from_json(meta_json);
  const auto g = detail::load_graph(g_path);
  const auto h = detail::load_graph(h_path);

  const auto H = static_cast<std::int64_t>(meta.input_h), W = static_cast<std::int64_t>(meta.input_w);
  const bool in_nchw = meta.input_layout == "NCHW", act_nchw = meta.activation_layout == "NCHW";
  const std::vector<std::int64_t> in_item = in_nchw ? std::vector<std::int64_t>{3, H, W} : std::vector<std::int64_t>{H, W, 3};
  const std::vector<float> black(static_cast<std::size_t>(3 * H * W), 0.0f);
  const onnx::Value probe = detail::run_per_item(*g, black, 1, in_item).front();
  if (probe.dims.size() != 4 || probe.dims[0] != 1)
    fail(ErrorCode::UnsupportedGraph, "g must produce a rank-4 activation with batch 1");
  SplitModel::Layout layout;
  layout.input_h = meta.input_h;
  layout.input_w = meta.input_w;
  layout.channels = static_cast<std::size_t>(act_nchw ? probe.dims[1] : probe.dims[3]);
  layout.act_h = static_cast<std::size_t>(act_nchw ? probe.dims[2] : probe.dims[1]);
  layout.act_w = static_cast<std::size_t>(act_nchw ? probe.dims[3] : probe.dims[2]);
  layout.num_classes = meta.num_classes;
  layout.spoof_class_index = meta.spoof_class_index;

  const auto& h_in = h->input_info();
  if (h_in.has_shape) {
    if (h_in.dims.size() != 4)
      fail(ErrorCode::ShapeMismatchAtSplit, "h input has rank " + std::to_string(h_in.dims.size()) + ", g output has rank 4");
    for (std::size_t k = 1; k < 4; ++k)
      if (h_in.dims[k] >= 0 && h_in.dims[k] != probe.dims[k])
        fail(ErrorCode::ShapeMismatchAtSplit, "g output dim " + std::to_string(k) + " is " + std::to_string(probe.dims[k]) +
                                                  ", h expects " + std::to_string(h_in.dims[k]));
  }
  const std::vector<std::int64_t> act_item(probe.dims.begin() + 1, probe.dims.end());
  const onnx::Value logits = h->run(probe);
  std::size_t logit_count = 1;
  for (auto d : logits.dims) logit_count *= static_cast<std::size_t>(d);
  if (logit_count != meta.num_classes)
    fail(ErrorCode::UnsupportedGraph, "h produces " + std::to_string(logit_count) + " logits, meta declares " +
                                          std::to_string(meta.num_classes));

  const auto L = layout;
  auto feature_fn = [g, in_nchw, act_nchw, in_item, L](const Tensor& images) {
    const std::size_t n = images.dim(0);
    std::vector<float> in = in_nchw ? detail::nhwc_to_nchw(images.data(), n, L.input_h, L.input_w, 3)
                                    : std::vector<float>(images.values().begin(), images.values().end());
    const auto outs = detail::run_per_item(*g, in, n, in_item);
    std::vector<float> flat;
    flat.reserve(n * L.act_h * L.act_w * L.channels);
    for (const auto& v : outs) flat.insert(flat.end(), v.f.begin(), v.f.end());
    if (act_nchw) flat = detail::nchw_to_nhwc(flat, n, L.channels, L.act_h, L.act_w);
    return Tensor({n, L.act_h, L.act_w, L.channels}, std::move(flat));
  };
  auto head_fn = [h, act_nchw, act_item, L](const Tensor& acts) {
    const std::size_t n = acts.dim(0);
    std::vector<float> in = act_nchw ? detail::nhwc_to_nchw(acts.data(), n, L.act_h, L.act_w, L.channels)
                                     : std::vector<float>(acts.values().begin(), acts.values().end());
    const auto outs = detail::run_per_item(*h, in, n, act_item);
    std::vector<float> flat;
    for (const auto& v : outs) flat.insert(flat.end(), v.f.begin(), v.f.end());
    return Tensor({n, L.num_classes}, std::move(flat));
  };
  return SplitModel(feature_fn, head_fn, layout);
}

// ---------------------------------------------------------------------------
// Patch filter

struct PatchSpec {
  std::size_t grid_rows = 4, grid_cols = 4;
  std::size_t patch_h = 0, patch_w = 0;

  // Default geometry: 4 x 4 grid of half-side patches.
  static PatchSpec defaults_for(std::size_t h, std::size_t w) { return {4, 4, std::max<std::size_t>(1, h / 2), std::max<std::size_t>(1, w / 2)}; }

  void validate(std::size_t image_h, std::size_t image_w) const {
    if (grid_rows < 1 || grid_cols < 1) fail(ErrorCode::SpecInvalid, "patch grid must be at least 1 x 1");
    if (patch_h < 1 || patch_w < 1) fail(ErrorCode::SpecInvalid, "patch dims must be positive");
    if (patch_h > image_h || patch_w > image_w)
      fail(ErrorCode::PatchLargerThanImage, std::to_string(patch_h) + "x" + std::to_string(patch_w) + " patch on " +
                                                std::to_string(image_h) + "x" + std::to_string(image_w) + " image");
  }

  nlohmann::json to_json() const {
    return {{"grid_rows", grid_rows}, {"grid_cols", grid_cols}, {"patch_h", patch_h}, {"patch_w", patch_w}};
  }
  static PatchSpec from_json(const nlohmann::json& j) {
    return {j.at("grid_rows").get<std::size_t>(), j.at("grid_cols").get<std::size_t>(), j.at("patch_h").get<std::size_t>(),
            j.at("patch_w").get<std::size_t>()};
  }
};

// Top-left corners evenly spaced from 0 to dim - patch.
inline std::vector<std::size_t> patch_corners(std::size_t dim, std::size_t patch, std::size_t grid) {
  std::vector<std::size_t> out(grid, 0);
  if (grid == 1) return out;
  const double span = static_cast<double>(dim - patch);
  for (std::size_t i = 0; i < grid; ++i)
    out[i] = static_cast<std::size_t>(std::llround(span * static_cast<double>(i) / static_cast<double>(grid - 1)));
  return out;
}

struct PatchBox {
  std::size_t image = 0;  // index into the source batch
  std::size_t y = 0, x = 0, h = 0, w = 0;
};

// Crops every grid patch of every image and resizes it to out_h x out_w.
// Output order: image-major, then row, then column. ids are "<parent>#r,c".
inline ImageBatch extract_patches(const ImageBatch& images, const PatchSpec& spec, std::size_t out_h, std::size_t out_w,
                                  std::vector<PatchBox>* boxes = nullptr) {
  const std::size_t H = images.height(), W = images.width();
  spec.validate(H, W);
  const auto ys = patch_corners(H, spec.patch_h, spec.grid_rows);
  const auto xs = patch_corners(W, spec.patch_w, spec.grid_cols);
  const std::size_t per = spec.grid_rows * spec.grid_cols, total = images.count() * per;
  Tensor out({total, out_h, out_w, 3});
  std::vector<std::string> ids;
  ids.reserve(total);
  if (boxes) boxes->clear();
  const std::size_t out_sz = out_h * out_w * 3;
  std::size_t slot = 0;
  for (std::size_t i = 0; i < images.count(); ++i) {
    const auto img = images.image(i);
    for (std::size_t r = 0; r < spec.grid_rows; ++r)
      for (std::size_t c = 0; c < spec.grid_cols; ++c, ++slot) {
        Tensor crop({spec.patch_h, spec.patch_w, 3});
        for (std::size_t y = 0; y < spec.patch_h; ++y) {
          const auto* src = img.data() + ((ys[r] + y) * W + xs[c]) * 3;
          std::copy(src, src + spec.patch_w * 3, crop.values().begin() + static_cast<std::ptrdiff_t>(y * spec.patch_w * 3));
        }
        const Tensor resized = resize_bilinear(crop, out_h, out_w);
        std::copy(resized.values().begin(), resized.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(slot * out_sz));
        ids.push_back(images.ids[i] + "#" + std::to_string(r) + "," + std::to_string(c));
        if (boxes) boxes->push_back({i, ys[r], xs[c], spec.patch_h, spec.patch_w});
      }
  }
  return {std::move(out), std::move(ids)};
}

}  // namespace sptd
