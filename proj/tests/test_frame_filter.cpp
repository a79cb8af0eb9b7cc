#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sptd/frame_filter.hpp"
#include "test_util.hpp"

using namespace sptd;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::InvalidArgument;
}

// Frames whose red value at pixel 0 encodes the frame index; the embedder
// looks the embedding up from that index.
Tensor indexed_frames(std::size_t n) {
  Tensor t({n, 8, 8, 3}, 0.5f);
  for (std::size_t i = 0; i < n; ++i) t[i * 192] = static_cast<float>(i) / 1000.0f;
  return t;
}

std::size_t frame_index(const float* frame) { return static_cast<std::size_t>(std::lround(frame[0] * 1000.0f)); }

EmbeddingProvider table_embedder(const Tensor& table) {
  return [table](const Tensor& frames) {
    const std::size_t D = table.dim(1);
    Tensor out({frames.dim(0), D});
    for (std::size_t i = 0; i < frames.dim(0); ++i) {
      const std::size_t id = frame_index(frames.data().data() + i * 192);
      for (std::size_t d = 0; d < D; ++d) out.at(i, d) = table.at(id, d);
    }
    return out;
  };
}

FaceDetector index_detector(std::function<bool(std::size_t)> pred) {
  return [pred](const Tensor& f) { return pred(frame_index(f.data().data())); };
}

oracle::Mat to_mat(const Tensor& t, const std::vector<std::size_t>& rows) {
  oracle::Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.dim(1)));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t d = 0; d < t.dim(1); ++d) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(d)) = t.at(rows[r], d);
  return m;
}

std::size_t binomial(std::size_t n, std::size_t k) {
  std::size_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace

TEST(FrameFilter, TwoClustersPickOneOfEach) {
  const Tensor table({6, 2}, std::vector<float>{1, 0, 1, 0, 1, 0, 0, 1, 0, 1, 0, 1});
  const FrameSelection s = filter_frames(indexed_frames(6), 2, 200, table_embedder(table), accept_all_detector(), 1);
  ASSERT_EQ(s.selected_indices.size(), 2u);
  EXPECT_LT(s.selected_indices[0], 3u);
  EXPECT_GE(s.selected_indices[1], 3u);
  EXPECT_DOUBLE_EQ(s.dissimilarity_score, 1.0);
  EXPECT_DOUBLE_EQ(s.dissimilarity_score, oracle::best_subset_dissimilarity(to_mat(table, {0, 1, 2, 3, 4, 5}), 2));
  EXPECT_EQ(s.iterations_used, 200u);
}

TEST(FrameFilter, ClampAndErrors) {
  const Tensor table = testutil::random_tensor({6, 4}, 3);
  const auto odd = index_detector([](std::size_t i) { return i % 2 == 1; });
  const FrameSelection s = filter_frames(indexed_frames(6), 3, 50, table_embedder(table), odd, 0);
  EXPECT_EQ(s.selected_indices, (std::vector<std::size_t>{1, 3, 5}));
  EXPECT_EQ(s.iterations_used, 0u);

  const auto none = index_detector([](std::size_t) { return false; });
  EXPECT_EQ(code_of([&] { filter_frames(indexed_frames(6), 2, 5, table_embedder(table), none, 0); }), ErrorCode::NoFaceFrames);
  const auto one = index_detector([](std::size_t i) { return i == 4; });
  EXPECT_EQ(code_of([&] { filter_frames(indexed_frames(6), 2, 5, table_embedder(table), one, 0); }),
            ErrorCode::InsufficientFrames);
  EXPECT_EQ(code_of([&] { filter_frames(indexed_frames(6), 1, 5, table_embedder(table), odd, 0); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { filter_frames(indexed_frames(6), 2, 0, table_embedder(table), odd, 0); }), ErrorCode::InvalidArgument);
}

TEST(FrameFilter, SelfConsistentMonotoneAndDeterministic) {
  const Tensor table = testutil::random_tensor({15, 5}, 8);
  const auto faces = index_detector([](std::size_t i) { return i != 4 && i != 9; });
  const auto emb = table_embedder(table);
  double prev = -1.0;
  for (std::size_t it : {1u, 2u, 4u, 8u, 16u, 32u, 64u}) {
    const FrameSelection s = filter_frames(indexed_frames(15), 4, it, emb, faces, 77);
    ASSERT_EQ(s.selected_indices.size(), 4u);
    for (std::size_t i = 1; i < 4; ++i) EXPECT_LT(s.selected_indices[i - 1], s.selected_indices[i]);
    for (auto i : s.selected_indices) EXPECT_TRUE(i != 4 && i != 9);
    // Recompute the score directly.
    double direct = 0.0;
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t b = a + 1; b < 4; ++b)
        direct += 1.0 - cosine_similarity(table.data().subspan(s.selected_indices[a] * 5, 5),
                                          table.data().subspan(s.selected_indices[b] * 5, 5));
    EXPECT_NEAR(s.dissimilarity_score, direct, 1e-12);
    EXPECT_GE(s.dissimilarity_score, prev);
    prev = s.dissimilarity_score;
  }
  const FrameSelection a = filter_frames(indexed_frames(15), 4, 100, emb, faces, 5, 1);
  const FrameSelection b = filter_frames(indexed_frames(15), 4, 100, emb, faces, 5, 4);
  EXPECT_EQ(a.selected_indices, b.selected_indices);
  EXPECT_EQ(a.dissimilarity_score, b.dissimilarity_score);
}

TEST(FrameFilter, ReachesExhaustiveOptimum) {
  std::size_t hits = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t n = 10 + seed % 5, l = 3 + seed % 3;
    const Tensor table = testutil::random_tensor({n, 6}, 100 + seed);
    const std::size_t combos = binomial(n, l);
    ASSERT_LE(combos, 10000u);
    const FrameSelection s = filter_frames(indexed_frames(n), l, 10 * combos, table_embedder(table), accept_all_detector(), seed);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const double best = oracle::best_subset_dissimilarity(to_mat(table, all), static_cast<int>(l));
    hits += std::abs(s.dissimilarity_score - best) < 1e-9;
  }
  EXPECT_GE(hits, 19u);
}

TEST(FrameFilter, HistogramEmbedderAndZeroCosine) {
  Tensor frames({2, 4, 4, 3}, 0.0f);
  for (std::size_t p = 0; p < 16; ++p) {
    frames[p * 3 + 0] = 0.99f;  // frame 0: red bin 7, green/blue bin 0
    frames[48 + p * 3 + 1] = 0.3f;  // frame 1: green bin 2
  }
  const Tensor e = histogram_embedder()(frames);
  ASSERT_EQ(e.shape(), (Shape{2, 24}));
  const double third = 1.0 / std::sqrt(3.0);
  EXPECT_NEAR(e.at(0, 7), third, 1e-6);
  EXPECT_NEAR(e.at(0, 8), third, 1e-6);
  EXPECT_NEAR(e.at(0, 16), third, 1e-6);
  EXPECT_NEAR(e.at(1, 0), third, 1e-6);
  EXPECT_NEAR(e.at(1, 10), third, 1e-6);
  const std::vector<float> z(3, 0.0f), v{1, 2, 3};
  EXPECT_EQ(cosine_similarity(z, v), 0.0);
  EXPECT_NEAR(cosine_similarity(v, v), 1.0, 1e-12);
  EXPECT_TRUE(brightness_detector(0.2, 0.8)(Tensor({2, 2, 3}, 0.5f)));
  EXPECT_FALSE(brightness_detector(0.2, 0.8)(Tensor({2, 2, 3}, 0.9f)));
}
