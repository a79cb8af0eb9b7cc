#include <gtest/gtest.h>

#include "sptd/model.hpp"
#include "sptd/planted.hpp"
#include "sptd/tensor_io.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace sptd;
namespace ox = sptd::onnx;

namespace {

struct Files {
  fs::path g, h, meta;
};

// g: 1x1 conv 3 -> C then 2x2 average pool; h: GAP -> Gemm(C -> 2).
Files write_pair(const fs::path& dir, std::int64_t in_side, std::int64_t C, std::int64_t h_channels,
                 std::size_t spoof_index = 1, bool nhwc = false) {
  const auto conv_w = testutil::random_tensor({static_cast<std::size_t>(C), 3}, 1);
  ox::ModelProto g;
  g.graph.initializers = {ox::float_tensor("w", {C, 3, 1, 1}, conv_w.values())};
  g.graph.nodes = {ox::node("Conv", {"image", "w"}, {"c"}), ox::node("Relu", {"c"}, {"r"}),
                   ox::node("AveragePool", {"r"}, {nhwc ? "p" : "act"},
                            {ox::attr_ints("kernel_shape", {2, 2}), ox::attr_ints("strides", {2, 2})})};
  const std::int64_t side = in_side / 2;
  if (nhwc) g.graph.nodes.push_back(ox::node("Transpose", {"p"}, {"act"}, {ox::attr_ints("perm", {0, 2, 3, 1})}));
  g.graph.inputs = {ox::value_info("image", {1, 3, in_side, in_side})};
  g.graph.outputs = {ox::value_info("act", {})};

  const auto fc = testutil::random_tensor({static_cast<std::size_t>(h_channels), 2}, 2);
  ox::ModelProto h;
  std::string pooled_in = "act";
  if (nhwc) {
    h.graph.nodes.push_back(ox::node("Transpose", {"act"}, {"act_nchw"}, {ox::attr_ints("perm", {0, 3, 1, 2})}));
    pooled_in = "act_nchw";
  }
  h.graph.initializers = {ox::float_tensor("fc", {h_channels, 2}, fc.values()), ox::float_tensor("b", {2}, {0.1f, -0.2f})};
  h.graph.nodes.push_back(ox::node("GlobalAveragePool", {pooled_in}, {"gap"}));
  h.graph.nodes.push_back(ox::node("Flatten", {"gap"}, {"flat"}));
  h.graph.nodes.push_back(ox::node("Gemm", {"flat", "fc", "b"}, {"logits"}));
  h.graph.inputs = {nhwc ? ox::value_info("act", {-1, side, side, h_channels}) : ox::value_info("act", {-1, h_channels, side, side})};
  h.graph.outputs = {ox::value_info("logits", {-1, 2})};

  Files f{dir / "g.onnx", dir / "h.onnx", dir / "meta.json"};
  write_file(f.g, ox::serialize_model(g));
  write_file(f.h, ox::serialize_model(h));
  nlohmann::json meta{{"input", {in_side, in_side}},
                      {"activation_layout", nhwc ? "NHWC" : "NCHW"},
                      {"num_classes", 2},
                      {"spoof_class_index", spoof_index}};
  write_file(f.meta, meta.dump());
  return f;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST(SplitModel, LoadsPairAndReportsSplitShape) {
  const auto dir = testutil::scratch_dir("model_valid");
  const auto f = write_pair(dir, 14, 512, 512);
  const SplitModel m = load_split_model(f.g, f.h, f.meta);
  EXPECT_EQ(m.layout().act_h, 7u);
  EXPECT_EQ(m.layout().act_w, 7u);
  EXPECT_EQ(m.channels(), 512u);
  EXPECT_EQ(m.spoof_class_index(), 1u);

  const Tensor x = testutil::random_tensor({2, 14, 14, 3}, 9, 0.0, 1.0);
  const Tensor direct = m.predict(x);
  const Tensor composed = m.head(m.features(x));
  EXPECT_EQ(direct, composed);
  EXPECT_EQ(direct.shape(), (Shape{2, 2}));
}

TEST(SplitModel, MismatchedSplitIsRejected) {
  const auto dir = testutil::scratch_dir("model_mismatch");
  const auto f = write_pair(dir, 14, 512, 256);
  EXPECT_EQ(code_of([&] { load_split_model(f.g, f.h, f.meta); }), ErrorCode::ShapeMismatchAtSplit);
}

TEST(SplitModel, BadMetaAndMissingFiles) {
  const auto dir = testutil::scratch_dir("model_meta");
  const auto f = write_pair(dir, 14, 8, 8, 2);
  EXPECT_EQ(code_of([&] { load_split_model(f.g, f.h, f.meta); }), ErrorCode::UnsupportedGraph);
  EXPECT_EQ(code_of([&] { load_split_model(dir / "nope.onnx", f.h, f.meta); }), ErrorCode::UnsupportedGraph);
}

TEST(SplitModel, ActivationLayoutIsNormalized) {
  const auto a = write_pair(testutil::scratch_dir("model_nchw"), 16, 6, 6);
  const auto b = write_pair(testutil::scratch_dir("model_nhwc"), 16, 6, 6, 1, true);
  const SplitModel ma = load_split_model(a.g, a.h, a.meta);
  const SplitModel mb = load_split_model(b.g, b.h, b.meta);
  const Tensor x = testutil::random_tensor({1, 16, 16, 3}, 4, 0.0, 1.0);
  EXPECT_EQ(ma.features(x).tensor, mb.features(x).tensor);
  const Tensor la = ma.predict(x), lb = mb.predict(x);
  for (std::size_t i = 0; i < la.size(); ++i) EXPECT_NEAR(la[i], lb[i], 1e-6);
}

TEST(PlantedModel, EmptyImageGivesBiasExactly) {
  const PlantedModel pm(PlantedModelSpec{});
  const Tensor img = pm.render({}, 5);
  const Tensor logits = pm.split().predict(img.reshaped({1, 64, 64, 3}));
  EXPECT_EQ(logits.at(0, 1), pm.attack_bias());
  EXPECT_EQ(logits.at(0, 0), 0.0f);
}

TEST(PlantedModel, DetectorPeaksInsidePlantedRegion) {
  const PlantedModel pm(PlantedModelSpec{});
  const SplitModel m = pm.split();
  for (std::size_t k = 0; k < 3; ++k) {
    const auto pats = pm.place({k}, 100 + k);
    const Tensor img = pm.render(pats, 200 + k);
    const ActivationBatch a = m.features(img.reshaped({1, 64, 64, 3}));
    std::size_t best = 0;
    for (std::size_t p = 0; p < a.positions(); ++p)
      if (a.tensor[p * a.channels() + k] > a.tensor[best * a.channels() + k]) best = p;
    const std::size_t cy = (best / a.width()) * 4 + 2, cx = (best % a.width()) * 4 + 2;
    EXPECT_TRUE(pats[0].contains(cy, cx)) << "pattern " << k;
    // Other detectors stay silent.
    for (std::size_t j = 0; j < 3; ++j)
      if (j != k)
        for (std::size_t p = 0; p < a.positions(); ++p) EXPECT_EQ(a.tensor[p * a.channels() + j], 0.0f);
  }
}

TEST(PlantedModel, AttackLogitGrowsWithPatternCount) {
  const PlantedModel pm(PlantedModelSpec{});
  const SplitModel m = pm.split();
  std::size_t checked = 0;
  for (std::size_t i = 0; checked < 100; ++i) {
    const PlantedSample s = pm.sample(77, i, 2, 2);
    ASSERT_EQ(s.patterns.size(), 2u);
    const Tensor two = s.image;
    const Tensor one = pm.render({s.patterns[0]}, derive_seed(77, i));
    const Tensor batch = Tensor({2, 64, 64, 3}, [&] {
      std::vector<float> v(two.values());
      v.insert(v.end(), one.values().begin(), one.values().end());
      return v;
    }());
    const Tensor logits = m.predict(batch);
    EXPECT_GT(logits.at(0, 1), logits.at(1, 1)) << "sample " << i;
    ++checked;
  }
}

TEST(PlantedModel, DeterministicAndOnnxEquivalent) {
  PlantedModelSpec spec;
  spec.seed = 3;
  const PlantedModel a(spec), b(spec);
  EXPECT_EQ(a.sample(1, 4).image, b.sample(1, 4).image);

  const auto dir = testutil::scratch_dir("planted_onnx");
  const auto e = a.export_onnx();
  write_file(dir / "g.onnx", e.g);
  write_file(dir / "h.onnx", e.h);
  write_file(dir / "meta.json", e.meta.dump());
  const SplitModel native = a.split();
  const SplitModel loaded = load_split_model(dir / "g.onnx", dir / "h.onnx", dir / "meta.json");
  for (std::size_t i = 0; i < 4; ++i) {
    const Tensor x = a.sample(9, i).image.reshaped({1, 64, 64, 3});
    const Tensor fa = native.features(x).tensor, fb = loaded.features(x).tensor;
    for (std::size_t j = 0; j < fa.size(); ++j) ASSERT_NEAR(fa[j], fb[j], 1e-6);
    const Tensor la = native.predict(x), lb = loaded.predict(x);
    for (std::size_t j = 0; j < la.size(); ++j) EXPECT_NEAR(la[j], lb[j], 1e-4 * std::max(1.0f, std::abs(la[j])));
  }
}

TEST(PlantedModel, InvalidSpec) {
  PlantedModelSpec spec;
  spec.channels = 3;
  EXPECT_EQ(code_of([&] { PlantedModel m(spec); }), ErrorCode::SpecInvalid);
  spec = {};
  spec.pattern_size = 100;
  EXPECT_EQ(code_of([&] { PlantedModel m(spec); }), ErrorCode::SpecInvalid);
}

TEST(Patches, UniformCorners) {
  EXPECT_EQ(patch_corners(224, 112, 3), (std::vector<std::size_t>{0, 56, 112}));
  EXPECT_EQ(patch_corners(64, 32, 4), (std::vector<std::size_t>{0, 11, 21, 32}));
  EXPECT_EQ(patch_corners(10, 10, 1), (std::vector<std::size_t>{0}));
}

TEST(Patches, ExtractCountsIdsAndIdentity) {
  const Tensor imgs = testutil::random_tensor({2, 24, 24, 3}, 3, 0.0, 1.0);
  const ImageBatch batch{imgs, {"a", "b"}};
  std::vector<PatchBox> boxes;
  const ImageBatch p = extract_patches(batch, {3, 2, 12, 12}, 16, 16, &boxes);
  EXPECT_EQ(p.count(), 2u * 3u * 2u);
  EXPECT_EQ(p.ids[0], "a#0,0");
  EXPECT_EQ(p.ids[5], "a#2,1");
  EXPECT_EQ(p.ids[6], "b#0,0");
  EXPECT_EQ(boxes[5].y, 12u);
  EXPECT_EQ(boxes[5].x, 12u);

  const ImageBatch same = extract_patches(batch, {1, 1, 24, 24}, 24, 24);
  EXPECT_EQ(same.tensor, imgs);

  EXPECT_EQ(code_of([&] { extract_patches(batch, {1, 1, 30, 30}, 24, 24); }), ErrorCode::PatchLargerThanImage);
}

TEST(Patches, CropContentMatchesSource) {
  const Tensor imgs = testutil::random_tensor({1, 20, 20, 3}, 8, 0.0, 1.0);
  const ImageBatch p = extract_patches({imgs, {"x"}}, {2, 2, 10, 10}, 10, 10);
  // Patch (1, 1) starts at (10, 10) and is not resized.
  for (std::size_t y = 0; y < 10; ++y)
    for (std::size_t x = 0; x < 10; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        EXPECT_EQ(p.tensor[((3 * 10 + y) * 10 + x) * 3 + c], imgs[((10 + y) * 20 + 10 + x) * 3 + c]);
}
