#pragma once

// Synthetic split classifier with planted, known concepts.
//
// Each planted pattern is a solid square of one hue. The hues sit at evenly
// spaced angles on the chroma plane (the plane orthogonal to gray), and the
// detector for pattern k is a 1x1 color filter along that hue followed by a
// threshold, so detector cones are disjoint and scale-invariant. Distractor
// channels are fixed positive color mixes. g = ReLU(1x1 conv) -> avg pool;
// h = global average pool -> linear head whose attack logit is
// gain * (sum of detector channel means) + bias.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sptd/error.hpp"
#include "sptd/model.hpp"
#include "sptd/onnx/model.hpp"
#include "sptd/rng.hpp"
#include "sptd/tensor.hpp"

namespace sptd {

struct PlantedModelSpec {
  std::size_t k_true = 3;
  std::size_t pattern_size = 20;
  std::size_t channels = 8;
  std::uint64_t seed = 0;
  std::size_t image_h = 64, image_w = 64;
  std::size_t pool = 4;
  double chroma = 0.3;

  static constexpr std::size_t kMaxPatterns = 6;

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorCode::SpecInvalid, m); };
    if (k_true < 1 || k_true > kMaxPatterns) bad("k_true must be in [1, " + std::to_string(kMaxPatterns) + "]");
    if (channels <= k_true) bad("channels must exceed k_true (at least one distractor channel)");
    if (image_h < 8 || image_w < 8) bad("image dims must be at least 8");
    if (pool < 1 || image_h % pool || image_w % pool) bad("image dims must be multiples of pool");
    if (pattern_size < 1 || pattern_size > std::min(image_h, image_w)) bad("pattern_size must fit in the image");
    if (!(chroma > 0.0 && chroma <= 0.5)) bad("chroma must be in (0, 0.5]");
  }

  nlohmann::json to_json() const {
    return {{"k_true", k_true}, {"pattern_size", pattern_size}, {"channels", channels}, {"seed", seed},
            {"image_h", image_h}, {"image_w", image_w},           {"pool", pool},         {"chroma", chroma}};
  }
  static PlantedModelSpec from_json(const nlohmann::json& j) {
    PlantedModelSpec s;
    try {
      s.k_true = j.value("k_true", s.k_true);
      s.pattern_size = j.value("pattern_size", s.pattern_size);
      s.channels = j.value("channels", s.channels);
      s.seed = j.value("seed", s.seed);
      s.image_h = j.value("image_h", s.image_h);
      s.image_w = j.value("image_w", s.image_w);
      s.pool = j.value("pool", s.pool);
      s.chroma = j.value("chroma", s.chroma);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::SpecInvalid, std::string("bad planted spec: ") + e.what());
    }
    s.validate();
    return s;
  }
};

struct PlantedPattern {
  std::size_t k = 0;  // pattern index
  std::size_t y = 0, x = 0;
  std::size_t size = 0;

  bool contains(std::size_t py, std::size_t px) const { return py >= y && py < y + size && px >= x && px < x + size; }
};

struct PlantedSample {
  Tensor image;  // H x W x 3
  std::vector<PlantedPattern> patterns;
};

class PlantedModel {
 public:
  explicit PlantedModel(PlantedModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    const std::size_t K = spec_.k_true, C = spec_.channels;
    weights_.assign(C * 3, 0.0f);
    bias_.assign(C, 0.0f);
    // Chroma basis orthogonal to (1, 1, 1).
    const std::array<double, 3> a{1.0 / std::sqrt(2.0), -1.0 / std::sqrt(2.0), 0.0};
    const std::array<double, 3> b{1.0 / std::sqrt(6.0), 1.0 / std::sqrt(6.0), -2.0 / std::sqrt(6.0)};
    const double neighbour = K >= 3 ? std::max(0.0, std::cos(2.0 * std::numbers::pi / static_cast<double>(K))) : 0.0;
    threshold_ = spec_.chroma * (neighbour + 0.25);
    hues_.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      const double th = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(K);
      for (int c = 0; c < 3; ++c) {
        hues_[k][c] = std::cos(th) * a[c] + std::sin(th) * b[c];
        weights_[k * 3 + c] = static_cast<float>(hues_[k][c]);
      }
      bias_[k] = static_cast<float>(-threshold_);
    }
    CounterRng rng(derive_seed(spec_.seed, "distractors"));
    for (std::size_t j = K; j < C; ++j) {
      std::array<double, 3> v{};
      double sum = 0.0;
      for (auto& x : v) sum += x = rng.uniform(0.2, 1.0);
      for (int c = 0; c < 3; ++c) weights_[j * 3 + c] = static_cast<float>(v[c] / sum);
    }
    // One full pattern adds +3 to the attack logit; the bias puts an empty
    // image at -1.
    const double response = spec_.chroma - threshold_;
    const double area = static_cast<double>(spec_.pattern_size * spec_.pattern_size) /
                        static_cast<double>(spec_.image_h * spec_.image_w);
    gain_ = static_cast<float>(3.0 / (response * area));
    attack_bias_ = -1.0f;
  }

  const PlantedModelSpec& spec() const { return spec_; }
  std::size_t act_h() const { return spec_.image_h / spec_.pool; }
  std::size_t act_w() const { return spec_.image_w / spec_.pool; }
  float attack_bias() const { return attack_bias_; }
  float gain() const { return gain_; }
  double threshold() const { return threshold_; }
  static constexpr std::size_t kSpoofClass = 1;

  // N x H x W x 3 -> N x h x w x C.
  Tensor features(const Tensor& images) const {
    const std::size_t n = images.dim(0), H = spec_.image_h, W = spec_.image_w, C = spec_.channels, P = spec_.pool;
    const std::size_t h = act_h(), w = act_w();
    Tensor out({n, h, w, C});
    std::vector<double> acc(h * w * C);
    const float* px = images.data().data();
    for (std::size_t b = 0; b < n; ++b) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t y = 0; y < H; ++y) {
        double* row = acc.data() + (y / P) * w * C;
        for (std::size_t x = 0; x < W; ++x, px += 3) {
          double* cell = row + (x / P) * C;
          for (std::size_t c = 0; c < C; ++c) {
            const float* wc = weights_.data() + c * 3;
            const double v = static_cast<double>(bias_[c]) + static_cast<double>(px[0]) * wc[0] +
                             static_cast<double>(px[1]) * wc[1] + static_cast<double>(px[2]) * wc[2];
            const float f = static_cast<float>(v);
            if (f > 0.0f) cell[c] += f;
          }
        }
      }
      const double inv = 1.0 / static_cast<double>(P * P);
      float* dst = out.data().data() + b * h * w * C;
      for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<float>(acc[i] * inv);
    }
    return out;
  }

  // N x h x w x C -> N x 2 logits (live, attack).
  Tensor head(const Tensor& acts) const {
    const std::size_t n = acts.dim(0), C = acts.dim(3), pos = acts.dim(1) * acts.dim(2);
    Tensor out({n, 2});
    for (std::size_t b = 0; b < n; ++b) {
      double logit = attack_bias_;
      for (std::size_t c = 0; c < spec_.k_true; ++c) {
        double s = 0.0;
        for (std::size_t p = 0; p < pos; ++p) s += acts[(b * pos + p) * C + c];
        logit += static_cast<double>(gain_) * static_cast<double>(static_cast<float>(s / static_cast<double>(pos)));
      }
      out.at(b, 0) = 0.0f;
      out.at(b, 1) = static_cast<float>(logit);
    }
    return out;
  }

  SplitModel split() const {
    SplitModel::Layout layout;
    layout.input_h = spec_.image_h;
    layout.input_w = spec_.image_w;
    layout.act_h = act_h();
    layout.act_w = act_w();
    layout.channels = spec_.channels;
    layout.num_classes = 2;
    layout.spoof_class_index = kSpoofClass;
    auto self = *this;
    return SplitModel([self](const Tensor& x) { return self.features(x); },
                      [self](const Tensor& a) { return self.head(a); }, layout);
  }

  // Exports (g, h, meta) equivalent to split(); g and h use NCHW.
  struct OnnxExport {
    std::string g, h;
    nlohmann::json meta;
  };
  OnnxExport export_onnx() const {
    namespace ox = sptd::onnx;
    const auto H = static_cast<std::int64_t>(spec_.image_h), W = static_cast<std::int64_t>(spec_.image_w);
    const auto C = static_cast<std::int64_t>(spec_.channels), P = static_cast<std::int64_t>(spec_.pool);
    OnnxExport e;
    ox::ModelProto g;
    g.producer_name = "sptd-planted";
    g.graph.name = "planted_g";
    g.graph.initializers = {ox::float_tensor("conv_w", {C, 3, 1, 1}, weights_), ox::float_tensor("conv_b", {C}, bias_)};
    g.graph.nodes = {ox::node("Conv", {"image", "conv_w", "conv_b"}, {"conv"}, {ox::attr_ints("kernel_shape", {1, 1})}),
                     ox::node("Relu", {"conv"}, {"relu"}),
                     ox::node("AveragePool", {"relu"}, {"act"},
                              {ox::attr_ints("kernel_shape", {P, P}), ox::attr_ints("strides", {P, P})})};
    g.graph.inputs = {ox::value_info("image", {1, 3, H, W})};
    g.graph.outputs = {ox::value_info("act", {1, C, H / P, W / P})};
    e.g = ox::serialize_model(g);

    std::vector<float> fc(static_cast<std::size_t>(C) * 2, 0.0f);
    for (std::size_t c = 0; c < spec_.k_true; ++c) fc[c * 2 + 1] = gain_;
    ox::ModelProto h;
    h.producer_name = "sptd-planted";
    h.graph.name = "planted_h";
    h.graph.initializers = {ox::float_tensor("fc_w", {C, 2}, fc), ox::float_tensor("fc_b", {2}, {0.0f, attack_bias_})};
    h.graph.nodes = {ox::node("GlobalAveragePool", {"act"}, {"pooled"}), ox::node("Flatten", {"pooled"}, {"flat"}),
                     ox::node("Gemm", {"flat", "fc_w", "fc_b"}, {"logits"})};
    h.graph.inputs = {ox::value_info("act", {1, C, H / P, W / P})};
    h.graph.outputs = {ox::value_info("logits", {1, 2})};
    e.h = ox::serialize_model(h);
    e.meta = SplitMeta{spec_.image_h, spec_.image_w, "NCHW", "NCHW", 2, kSpoofClass}.to_json();
    return e;
  }

  // Smooth low-chroma background with the given patterns painted on top.
  Tensor render(const std::vector<PlantedPattern>& patterns, std::uint64_t background_seed) const {
    const std::size_t H = spec_.image_h, W = spec_.image_w;
    CounterRng rng(derive_seed(background_seed, "background"));
    Tensor gray({4, 4}), ca({4, 4}), cb({4, 4});
    for (std::size_t i = 0; i < 16; ++i) {
      gray[i] = static_cast<float>(rng.uniform(0.3, 0.7));
      ca[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
      cb[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    const Tensor g = resize_bilinear(gray, H, W), u = resize_bilinear(ca, H, W), v = resize_bilinear(cb, H, W);
    // Background chroma magnitude stays below a third of the threshold.
    const double amp = threshold_ / 3.0 / std::sqrt(2.0);
    const std::array<double, 3> a{1.0 / std::sqrt(2.0), -1.0 / std::sqrt(2.0), 0.0};
    const std::array<double, 3> b{1.0 / std::sqrt(6.0), 1.0 / std::sqrt(6.0), -2.0 / std::sqrt(6.0)};
    Tensor img({H, W, 3});
    for (std::size_t p = 0; p < H * W; ++p)
      for (int c = 0; c < 3; ++c)
        img[p * 3 + c] = static_cast<float>(g[p] + amp * (u[p] * a[c] + v[p] * b[c]));
    for (const auto& pat : patterns) {
      if (pat.k >= spec_.k_true) fail(ErrorCode::SpecInvalid, "pattern index out of range");
      if (pat.y + pat.size > H || pat.x + pat.size > W) fail(ErrorCode::SpecInvalid, "pattern outside the image");
      for (std::size_t y = pat.y; y < pat.y + pat.size; ++y)
        for (std::size_t x = pat.x; x < pat.x + pat.size; ++x)
          for (int c = 0; c < 3; ++c)
            img.at(y, x, static_cast<std::size_t>(c)) = static_cast<float>(0.5 + spec_.chroma * hues_[pat.k][c]);
    }
    return img;
  }

  // Random non-overlapping placement of the given pattern indices.
  std::vector<PlantedPattern> place(const std::vector<std::size_t>& which, std::uint64_t seed) const {
    const std::size_t S = spec_.pattern_size, H = spec_.image_h, W = spec_.image_w;
    CounterRng rng(derive_seed(seed, "placement"));
    for (int attempt = 0; attempt < 10000; ++attempt) {
      std::vector<PlantedPattern> out;
      bool ok = true;
      for (std::size_t k : which) {
        PlantedPattern p{k, static_cast<std::size_t>(rng.below(H - S + 1)), static_cast<std::size_t>(rng.below(W - S + 1)), S};
        for (const auto& q : out) {
          // Keep a one-pixel gap between patterns.
          const bool apart = p.y >= q.y + S + 1 || q.y >= p.y + S + 1 || p.x >= q.x + S + 1 || q.x >= p.x + S + 1;
          if (!apart) ok = false;
        }
        if (!ok) break;
        out.push_back(p);
      }
      if (ok) return out;
    }
    fail(ErrorCode::SpecInvalid, "cannot place " + std::to_string(which.size()) + " patterns of size " +
                                     std::to_string(S) + " without overlap");
  }

  // Attack sample i of a stream: 1..min(3, K) distinct patterns.
  PlantedSample sample(std::uint64_t data_seed, std::size_t i, std::size_t min_patterns = 1,
                       std::size_t max_patterns = 3) const {
    const std::uint64_t s = derive_seed(data_seed, i);
    CounterRng rng(derive_seed(s, "count"));
    max_patterns = std::min(max_patterns, spec_.k_true);
    min_patterns = std::min(min_patterns, max_patterns);
    const std::size_t count = min_patterns + static_cast<std::size_t>(rng.below(max_patterns - min_patterns + 1));
    std::vector<std::size_t> pool(spec_.k_true);
    for (std::size_t k = 0; k < pool.size(); ++k) pool[k] = k;
    for (std::size_t k = 0; k < count; ++k) std::swap(pool[k], pool[k + rng.below(pool.size() - k)]);
    std::vector<std::size_t> which(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(which.begin(), which.end());
    PlantedSample out;
    out.patterns = place(which, s);
    out.image = render(out.patterns, s);
    return out;
  }

  BinaryMask region_mask(const PlantedPattern& p) const {
    BinaryMask m(spec_.image_h, spec_.image_w);
    for (std::size_t y = p.y; y < p.y + p.size; ++y)
      for (std::size_t x = p.x; x < p.x + p.size; ++x) m.set(y * spec_.image_w + x);
    return m;
  }

 private:
  PlantedModelSpec spec_;
  std::vector<std::array<double, 3>> hues_;
  std::vector<float> weights_;  // C x 3
  std::vector<float> bias_;     // C
  double threshold_ = 0.0;
  float gain_ = 1.0f;
  float attack_bias_ = -1.0f;
};

// Stacks samples into a batch with ids "<prefix><index>".
inline ImageBatch stack_samples(const std::vector<PlantedSample>& samples, const std::string& prefix) {
  const std::size_t n = samples.size();
  if (n == 0) fail(ErrorCode::EmptyInput, "no samples to stack");
  const auto& s0 = samples.front().image.shape();
  Tensor t({n, s0[0], s0[1], 3});
  std::vector<std::string> ids;
  const std::size_t sz = samples.front().image.size();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(samples[i].image.values().begin(), samples[i].image.values().end(),
              t.values().begin() + static_cast<std::ptrdiff_t>(i * sz));
    ids.push_back(prefix + std::to_string(i));
  }
  return {std::move(t), std::move(ids)};
}

}  // namespace sptd
