#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "sptd/image_io.hpp"
#include "sptd/rng.hpp"
#include "sptd/tensor.hpp"
#include "sptd/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace sptd;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("sptd_test_tensor_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -5.0, double hi = 5.0) {
  Tensor t(std::move(shape));
  CounterRng rng(seed);
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

}  // namespace

TEST(TensorFormat, LoadsHandWrittenFile) {
  std::string bytes = "F32T v1 dims=2,3\n";
  for (int i = 0; i < 6; ++i) {
    float v = static_cast<float>(i);
    char raw[4];
    std::memcpy(raw, &v, 4);  // host is little-endian
    bytes.append(raw, 4);
  }
  const auto dir = scratch_dir("hand");
  write_file(dir / "t.f32t", bytes);
  const Tensor t = load_tensor(dir / "t.f32t");
  EXPECT_EQ(t.shape(), (Shape{2, 3}));
  EXPECT_EQ(t.values(), (std::vector<float>{0, 1, 2, 3, 4, 5}));
}

TEST(TensorFormat, RoundTripIsBitExact) {
  const auto dir = scratch_dir("roundtrip");
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor t = random_tensor({4, 5, 6}, seed, -1e30, 1e30);
    t[0] = -0.0f;
    t[1] = std::numeric_limits<float>::denorm_min();
    save_tensor(dir / "r.f32t", t);
    const Tensor back = load_tensor(dir / "r.f32t");
    ASSERT_EQ(back.shape(), t.shape());
    ASSERT_EQ(std::memcmp(back.values().data(), t.values().data(), 4 * t.size()), 0);
  }
}

TEST(TensorFormat, RejectsBadFiles) {
  auto code_of = [](const std::string& bytes) {
    try {
      decode_tensor(bytes);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;
  };
  EXPECT_EQ(code_of("F32T v1 dims=2,3\n" + std::string(20, '\0')), ErrorCode::PayloadLengthMismatch);
  EXPECT_EQ(code_of("F32T v1 dims=2,3\n" + std::string(28, '\0')), ErrorCode::PayloadLengthMismatch);
  EXPECT_EQ(code_of("F32 v1 dims=1\n" + std::string(4, '\0')), ErrorCode::MalformedHeader);
  EXPECT_EQ(code_of("F32T v1 dims=0\n"), ErrorCode::MalformedHeader);
  EXPECT_EQ(code_of("F32T v1 dims=a\n"), ErrorCode::MalformedHeader);
  EXPECT_EQ(code_of("F32T v1 dims=1"), ErrorCode::MalformedHeader);
  std::string nan_payload = "F32T v1 dims=1\n";
  const float nan = std::numeric_limits<float>::quiet_NaN();
  nan_payload.append(reinterpret_cast<const char*>(&nan), 4);
  EXPECT_EQ(code_of(nan_payload), ErrorCode::NonFiniteValue);

  Tensor bad({2}, 0.0f);
  bad[1] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(encode_tensor(bad), Error);
}

TEST(Resize, ConstantIsPreserved) {
  Tensor t({5, 7}, 0.7f);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 11}, {20, 4}, {64, 64}}) {
    const Tensor r = resize_bilinear(t, h, w);
    ASSERT_EQ(r.shape(), (Shape{h, w}));
    for (float v : r.values()) ASSERT_EQ(v, 0.7f);
  }
}

TEST(Resize, HalfPixelCentersOnTwoByTwo) {
  const Tensor t({2, 2}, std::vector<float>{0, 1, 0, 1});
  const Tensor r = resize_bilinear(t, 2, 4);
  for (std::size_t row = 0; row < 2; ++row) {
    EXPECT_FLOAT_EQ(r.at(row, 0), 0.0f);
    EXPECT_FLOAT_EQ(r.at(row, 1), 0.25f);
    EXPECT_FLOAT_EQ(r.at(row, 2), 0.75f);
    EXPECT_FLOAT_EQ(r.at(row, 3), 1.0f);
  }
}

TEST(Resize, IdentityAndBoundsProperty) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    CounterRng rng(seed + 100);
    const std::size_t h = 1 + rng.below(12), w = 1 + rng.below(12), c = 1 + rng.below(3);
    const Tensor t = random_tensor({h, w, c}, seed);
    EXPECT_EQ(resize_bilinear(t, h, w), t);
    const Tensor r = resize_bilinear(t, 1 + rng.below(30), 1 + rng.below(30));
    EXPECT_GE(r.min_value(), t.min_value());
    EXPECT_LE(r.max_value(), t.max_value());
  }
  EXPECT_THROW(resize_bilinear(Tensor{}, 2, 2), Error);
}

TEST(Binarize, OrderingAndTieBreak) {
  Tensor ramp({10, 10});
  for (std::size_t i = 0; i < 100; ++i) ramp[i] = static_cast<float>(i);
  const BinaryMask top = binarize_top_fraction(ramp, 0.3);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(top.test(i), i >= 70) << i;

  const BinaryMask flat = binarize_top_fraction(Tensor({10, 10}, 0.5f), 0.1);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(flat.test(i), i < 10) << i;

  EXPECT_EQ(binarize_top_fraction(ramp, 1.0).count(), 100u);
  EXPECT_THROW(binarize_top_fraction(ramp, 0.0), Error);
  EXPECT_THROW(binarize_top_fraction(ramp, 1.5), Error);
}

TEST(Binarize, PopcountProperty) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    CounterRng rng(seed);
    const std::size_t h = 1 + rng.below(20), w = 1 + rng.below(20);
    const double x = std::max(1e-6, rng.uniform());
    const Tensor heat = random_tensor({h, w}, seed, 0.0, 1.0);
    EXPECT_EQ(binarize_top_fraction(heat, x).count(), top_fraction_count(h * w, x));
  }
}

TEST(ImageCodec, PngRoundTripAndMaskRules) {
  const auto dir = scratch_dir("png");
  Tensor img({9, 11, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i % 256) / 255.0f;
  save_image_png(dir / "a.png", img);
  const Tensor back = load_image(dir / "a.png");
  EXPECT_EQ(back, img);

  BinaryMask m(4, 5);
  m.set(3);
  m.set(17);
  save_mask(dir / "m.png", m);
  EXPECT_EQ(load_mask(dir / "m.png"), m);

  // Intermediate gray levels are not valid annotation values.
  std::vector<std::uint8_t> px(20, 0);
  px[4] = 128;
  write_file(dir / "bad.png", detail::encode_png(px, 4, 5, PNG_FORMAT_GRAY));
  try {
    load_mask(dir / "bad.png");
    FAIL() << "expected InvalidMask";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidMask);
  }
  EXPECT_THROW(load_image(dir / "missing.png"), Error);
}

TEST(ImageCodec, PngEncodingIsDeterministic) {
  Tensor img({8, 8, 3}, 0.25f);
  EXPECT_EQ(detail::encode_png(std::vector<std::uint8_t>(192, 7), 8, 8, PNG_FORMAT_RGB),
            detail::encode_png(std::vector<std::uint8_t>(192, 7), 8, 8, PNG_FORMAT_RGB));
  const Tensor overlay = render_overlay(img, Tensor({8, 8}, 1.0f));
  EXPECT_EQ(overlay.shape(), img.shape());
}
