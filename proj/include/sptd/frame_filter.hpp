#pragma once

// Picks l mutually dissimilar face frames from a video by random search over
// l-subsets, scored by summed pairwise cosine dissimilarity of embeddings.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "sptd/error.hpp"
#include "sptd/parallel.hpp"
#include "sptd/rng.hpp"
#include "sptd/tensor.hpp"

namespace sptd {

// N x H x W x 3 frames -> N x D embeddings.
using EmbeddingProvider = std::function<Tensor(const Tensor&)>;
// H x W x 3 frame -> face present.
using FaceDetector = std::function<bool(const Tensor&)>;

// Per-channel colour histogram, `bins` bins per channel, L2-normalized.
inline EmbeddingProvider histogram_embedder(std::size_t bins = 8) {
  return [bins](const Tensor& frames) {
    const std::size_t n = frames.dim(0), px = frames.dim(1) * frames.dim(2), D = 3 * bins;
    Tensor out({n, D});
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> h(D, 0.0);
      const float* f = frames.data().data() + i * px * 3;
      for (std::size_t p = 0; p < px; ++p)
        for (std::size_t c = 0; c < 3; ++c) {
          const auto b = std::min(bins - 1, static_cast<std::size_t>(std::clamp(f[p * 3 + c], 0.0f, 1.0f) * static_cast<float>(bins)));
          h[c * bins + b] += 1.0;
        }
      double norm = 0.0;
      for (double v : h) norm += v * v;
      norm = std::sqrt(norm);
      for (std::size_t d = 0; d < D; ++d) out.at(i, d) = static_cast<float>(norm > 0.0 ? h[d] / norm : 0.0);
    }
    return out;
  };
}

inline FaceDetector accept_all_detector() {
  return [](const Tensor&) { return true; };
}

// Face present iff mean intensity lies in [lo, hi].
inline FaceDetector brightness_detector(double lo, double hi) {
  return [lo, hi](const Tensor& f) {
    double s = 0.0;
    for (float v : f.values()) s += v;
    const double mean = s / static_cast<double>(f.size());
    return mean >= lo && mean <= hi;
  };
}

// Cosine similarity; 0 when either vector is zero.
inline double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

struct FrameSelection {
  std::vector<std::size_t> selected_indices;  // into the original frame list
  double dissimilarity_score = 0.0;
  std::size_t iterations_used = 0;

  nlohmann::json to_json() const {
    return {{"indices", selected_indices}, {"score", dissimilarity_score}, {"iterations_used", iterations_used}};
  }
};

// Sum over pairs of 1 - cos for rows `pick` of a dissimilarity matrix.
inline double subset_dissimilarity(const std::vector<double>& dis, std::size_t m, const std::vector<std::size_t>& pick) {
  double s = 0.0;
  for (std::size_t i = 0; i < pick.size(); ++i)
    for (std::size_t j = i + 1; j < pick.size(); ++j) s += dis[pick[i] * m + pick[j]];
  return s;
}

// Draw d: l distinct positions out of m, keyed by (seed, d).
inline std::vector<std::size_t> frame_draw(std::uint64_t seed, std::size_t d, std::size_t m, std::size_t l) {
  CounterRng rng(derive_seed(derive_seed(seed, "frame-draw"), d));
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < l; ++i) std::swap(idx[i], idx[i + rng.below(m - i)]);
  idx.resize(l);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline FrameSelection filter_frames(const Tensor& frames, std::size_t l, std::size_t iter_count,
                                    const EmbeddingProvider& embedder, const FaceDetector& detector, std::uint64_t seed,
                                    std::size_t workers = 1) {
  if (l < 2) fail(ErrorCode::InvalidArgument, "l must be at least 2");
  if (iter_count < 1) fail(ErrorCode::InvalidArgument, "iter_count must be at least 1");
  if (frames.rank() != 4 || frames.dim(3) != 3) fail(ErrorCode::ShapeMismatch, "frames must be N x H x W x 3");
  const std::size_t n = frames.dim(0), fsz = frames.size() / std::max<std::size_t>(n, 1);

  std::vector<std::size_t> faces;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor f({frames.dim(1), frames.dim(2), 3}, std::vector<float>(frames.values().begin() + static_cast<std::ptrdiff_t>(i * fsz),
                                                                    frames.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * fsz)));
    if (detector(f)) faces.push_back(i);
  }
  if (faces.empty()) fail(ErrorCode::NoFaceFrames, "no frame contains a face");
  if (faces.size() < 2) fail(ErrorCode::InsufficientFrames, "only one face frame, need at least 2");
  const std::size_t m = faces.size();

  // Embed face frames only; row r belongs to original frame faces[r].
  Tensor sub({m, frames.dim(1), frames.dim(2), 3});
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(frames.values().begin() + static_cast<std::ptrdiff_t>(faces[r] * fsz), fsz,
                sub.values().begin() + static_cast<std::ptrdiff_t>(r * fsz));
  const Tensor emb = embedder(sub);
  if (emb.rank() != 2 || emb.dim(0) != m || !emb.all_finite())
    fail(ErrorCode::ShapeMismatch, "embedder must return finite m x D features");
  const std::size_t D = emb.dim(1);
  std::vector<double> dis(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j)
      dis[i * m + j] = dis[j * m + i] = 1.0 - cosine_similarity(emb.data().subspan(i * D, D), emb.data().subspan(j * D, D));

  FrameSelection sel;
  std::vector<std::size_t> best;
  if (m <= l) {
    best.resize(m);
    std::iota(best.begin(), best.end(), std::size_t{0});
    sel.dissimilarity_score = subset_dissimilarity(dis, m, best);
  } else {
    std::vector<double> scores(iter_count);
    parallel_for(iter_count, workers, [&](std::size_t d) { scores[d] = subset_dissimilarity(dis, m, frame_draw(seed, d, m, l)); });
    const auto top = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
    best = frame_draw(seed, top, m, l);
    sel.dissimilarity_score = scores[top];
    sel.iterations_used = iter_count;
  }
  for (auto r : best) sel.selected_indices.push_back(faces[r]);
  return sel;
}

}  // namespace sptd
