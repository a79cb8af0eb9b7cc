#pragma once

// Explanation scoring: IoU, budget-normalized IoU against expert masks,
// benchmark aggregation, and deletion/insertion fidelity curves.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sptd/attribution.hpp"
#include "sptd/error.hpp"
#include "sptd/image_io.hpp"
#include "sptd/manifest.hpp"
#include "sptd/model.hpp"
#include "sptd/parallel.hpp"
#include "sptd/tensor.hpp"

namespace sptd {

struct OverlapCounts {
  std::size_t a = 0, b = 0, inter = 0;
  std::size_t uni() const { return a + b - inter; }
};

inline OverlapCounts overlap(const BinaryMask& a, const BinaryMask& b) {
  if (a.height() != b.height() || a.width() != b.width())
    fail(ErrorCode::DimMismatch, "masks differ in size");
  OverlapCounts c;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.test(i), y = b.test(i);
    c.a += x;
    c.b += y;
    c.inter += x && y;
  }
  return c;
}

inline double iou(const BinaryMask& a, const BinaryMask& b) {
  const OverlapCounts c = overlap(a, b);
  if (c.uni() == 0) return 1.0;
  return static_cast<double>(c.inter) / static_cast<double>(c.uni());
}

struct NiouResult {
  double iou = 0.0;
  double niou = 0.0;
};

// IoU of gt against the top-x binarized heatmap, rescaled by the best IoU
// reachable with that budget. The budget is the realized pixel count
// round(x*H*W), so the factor is max(t, g) / min(t, g) in pixels.
inline NiouResult n_iou_detail(const BinaryMask& gt, const Tensor& heatmap, double x) {
  if (heatmap.rank() != 2 || heatmap.dim(0) != gt.height() || heatmap.dim(1) != gt.width())
    fail(ErrorCode::DimMismatch, "heatmap and mask differ in size");
  const std::size_t g = gt.count();
  if (g == 0) fail(ErrorCode::EmptyGroundTruth, "ground-truth mask is empty");
  if (!(x > 0.0 && x <= 1.0)) fail(ErrorCode::FractionOutOfRange, "fraction must lie in (0, 1]");
  if (top_fraction_count(gt.size(), x) == 0)
    fail(ErrorCode::FractionOutOfRange, "fraction selects no pixel of a " + std::to_string(gt.size()) + "-pixel image");
  const OverlapCounts c = overlap(gt, binarize_top_fraction(heatmap, x));
  const double num = static_cast<double>(c.inter) * static_cast<double>(std::max(c.a, c.b));
  const double den = static_cast<double>(c.uni()) * static_cast<double>(std::min(c.a, c.b));
  return {static_cast<double>(c.inter) / static_cast<double>(c.uni()), std::min(1.0, num / den)};
}

inline double n_iou(const BinaryMask& gt, const Tensor& heatmap, double x) { return n_iou_detail(gt, heatmap, x).niou; }

enum class HeatmapSelector { Best, Mean };

inline HeatmapSelector parse_selector(const std::string& s) {
  if (s == "best") return HeatmapSelector::Best;
  if (s == "mean") return HeatmapSelector::Mean;
  fail(ErrorCode::InvalidArgument, "unknown heatmap selector '" + s + "'");
}

struct ImageScore {
  std::string image_id;
  std::string spoof_type;
  std::size_t masks = 0;
  double mean_iou = 0.0;
  double mean_niou = 0.0;
};

struct GroupScore {
  std::size_t images = 0;
  std::size_t masks = 0;
  double mean_iou = 0.0;
  double mean_niou = 0.0;
};

struct EvalReport {
  double x = 0.3;
  std::string selector = "best";
  std::map<std::string, GroupScore> per_type;
  GroupScore overall;
  std::vector<ImageScore> per_image;  // sorted by image id
  nlohmann::json config;

  nlohmann::json to_json() const {
    auto group = [](const GroupScore& g) {
      return nlohmann::json{{"images", g.images}, {"count", g.masks}, {"mean_iou", g.mean_iou}, {"mean_niou", g.mean_niou}};
    };
    nlohmann::json types = nlohmann::json::object();
    for (const auto& [t, g] : per_type) types[t] = group(g);
    nlohmann::json images = nlohmann::json::array();
    for (const auto& s : per_image)
      images.push_back({{"image_id", s.image_id}, {"spoof_type", s.spoof_type}, {"masks", s.masks},
                        {"iou", s.mean_iou}, {"niou", s.mean_niou}});
    nlohmann::json j{{"x", x}, {"selector", selector}, {"per_type", types}, {"overall", group(overall)}, {"per_image", images}};
    if (!config.is_null()) j["config"] = config;
    return j;
  }

  std::string to_csv() const {
    std::ostringstream out;
    out.precision(6);
    out << std::fixed << "spoof_type,images,masks,mean_iou,mean_niou\n";
    for (const auto& [t, g] : per_type) out << t << ',' << g.images << ',' << g.masks << ',' << g.mean_iou << ',' << g.mean_niou << '\n';
    out << "overall," << overall.images << ',' << overall.masks << ',' << overall.mean_iou << ',' << overall.mean_niou << '\n';
    return out.str();
  }
};

// Scores of one mask against an explanation's heatmaps. An explanation
// without heatmaps scores 0.
inline NiouResult score_mask(const BinaryMask& gt, const std::vector<Tensor>& heatmaps, double x, HeatmapSelector sel) {
  NiouResult out;
  if (heatmaps.empty()) {
    if (gt.count() == 0) fail(ErrorCode::EmptyGroundTruth, "ground-truth mask is empty");
    return out;
  }
  for (const auto& h : heatmaps) {
    const Tensor& hm = h.dim(0) == gt.height() && h.dim(1) == gt.width() ? h : resize_bilinear(h, gt.height(), gt.width());
    const NiouResult r = n_iou_detail(gt, hm, x);
    if (sel == HeatmapSelector::Mean) {
      out.iou += r.iou / static_cast<double>(heatmaps.size());
      out.niou += r.niou / static_cast<double>(heatmaps.size());
    } else if (r.niou > out.niou) {
      out = r;
    }
  }
  return out;
}

// masks -> image mean -> per-type mean over images -> overall mean over
// images. Entries without masks (bona fide frames) are not scored.
inline EvalReport evaluate_benchmark(const BenchmarkManifest& manifest, const std::filesystem::path& explanations_dir,
                                     double x = 0.3, HeatmapSelector selector = HeatmapSelector::Best,
                                     std::size_t workers = 1) {
  if (!(x > 0.0 && x <= 1.0)) fail(ErrorCode::FractionOutOfRange, "fraction must lie in (0, 1]");
  std::vector<const ManifestEntry*> scored;
  for (const auto& e : manifest.entries)
    if (!e.masks.empty()) scored.push_back(&e);
  if (scored.empty()) fail(ErrorCode::EmptyManifest, "manifest has no annotated masks");

  std::vector<ImageScore> scores(scored.size());
  parallel_for(scored.size(), workers, [&](std::size_t i) {
    const ManifestEntry& e = *scored[i];
    const std::string id = image_id(e.image);
    const Explanation ex = load_explanation(explanations_dir / id);
    ImageScore s{id, e.spoof_type, e.masks.size()};
    for (const auto& m : e.masks) {
      const NiouResult r = score_mask(load_mask(manifest.resolve(m.path)), ex.heatmaps, x, selector);
      s.mean_iou += r.iou;
      s.mean_niou += r.niou;
    }
    s.mean_iou /= static_cast<double>(e.masks.size());
    s.mean_niou /= static_cast<double>(e.masks.size());
    scores[i] = std::move(s);
  });
  std::sort(scores.begin(), scores.end(), [](const ImageScore& a, const ImageScore& b) {
    return std::tie(a.image_id, a.spoof_type) < std::tie(b.image_id, b.spoof_type);
  });

  EvalReport rep;
  rep.x = x;
  rep.selector = selector == HeatmapSelector::Best ? "best" : "mean";
  for (const auto& s : scores) {
    GroupScore& g = rep.per_type[s.spoof_type];
    ++g.images;
    g.masks += s.masks;
    g.mean_iou += s.mean_iou;
    g.mean_niou += s.mean_niou;
  }
  for (auto& [t, g] : rep.per_type) {
    rep.overall.images += g.images;
    rep.overall.masks += g.masks;
    rep.overall.mean_iou += g.mean_iou;
    rep.overall.mean_niou += g.mean_niou;
    g.mean_iou /= static_cast<double>(g.images);
    g.mean_niou /= static_cast<double>(g.images);
  }
  rep.overall.mean_iou /= static_cast<double>(rep.overall.images);
  rep.overall.mean_niou /= static_cast<double>(rep.overall.images);
  rep.per_image = std::move(scores);
  return rep;
}

// Separable Gaussian blur of an H x W x C image with edge clamping.
inline Tensor gaussian_blur(const Tensor& image, std::size_t kernel = 11, double sigma = 5.0) {
  if (image.rank() != 3 || kernel % 2 == 0 || !(sigma > 0.0))
    fail(ErrorCode::InvalidArgument, "blur needs an H x W x C image, odd kernel and positive sigma");
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(kernel / 2);
  std::vector<double> k(kernel);
  double sum = 0.0;
  for (std::ptrdiff_t i = -r; i <= r; ++i) sum += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
  for (double& v : k) v /= sum;
  const auto H = static_cast<std::ptrdiff_t>(image.dim(0)), W = static_cast<std::ptrdiff_t>(image.dim(1));
  const auto C = static_cast<std::ptrdiff_t>(image.dim(2));
  auto pass = [&](const Tensor& in, bool horizontal) {
    Tensor out(in.shape());
    for (std::ptrdiff_t y = 0; y < H; ++y)
      for (std::ptrdiff_t x = 0; x < W; ++x)
        for (std::ptrdiff_t c = 0; c < C; ++c) {
          double acc = 0.0;
          for (std::ptrdiff_t i = -r; i <= r; ++i) {
            const std::ptrdiff_t yy = horizontal ? y : std::clamp(y + i, std::ptrdiff_t{0}, H - 1);
            const std::ptrdiff_t xx = horizontal ? std::clamp(x + i, std::ptrdiff_t{0}, W - 1) : x;
            acc += k[static_cast<std::size_t>(i + r)] * in[static_cast<std::size_t>((yy * W + xx) * C + c)];
          }
          out[static_cast<std::size_t>((y * W + x) * C + c)] = static_cast<float>(acc);
        }
    return out;
  };
  return pass(pass(image, true), false);
}

struct FidelityCurve {
  std::vector<double> fractions;  // i / steps, i = 0..steps
  std::vector<double> scores;     // class probability at each fraction
  double auc = 0.0;
};

inline double trapezoid_auc(const std::vector<double>& xs, const std::vector<double>& ys) {
  double a = 0.0;
  for (std::size_t i = 1; i < xs.size(); ++i) a += 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
  return a;
}

// Starts from `start` and, step by step, copies pixels of `target` in
// descending heatmap order; batch i covers the first round(i*HW/steps)
// ranked pixels.
inline FidelityCurve pixel_transfer_curve(const Tensor& start, const Tensor& target, const Tensor& heatmap,
                                          const SplitModel& model, std::size_t class_index, std::size_t steps,
                                          std::size_t batch = 32) {
  if (steps < 1) fail(ErrorCode::InvalidArgument, "steps must be at least 1");
  if (class_index >= model.num_classes()) fail(ErrorCode::InvalidArgument, "class index out of range");
  if (heatmap.rank() != 2 || start.rank() != 3 || heatmap.dim(0) != start.dim(0) || heatmap.dim(1) != start.dim(1) ||
      start.shape() != target.shape())
    fail(ErrorCode::DimMismatch, "heatmap and image differ in size");
  const std::size_t h = start.dim(0), w = start.dim(1), hw = h * w;
  const auto order = rank_descending(heatmap.data());
  FidelityCurve curve;
  for (std::size_t i = 0; i <= steps; ++i) curve.fractions.push_back(static_cast<double>(i) / static_cast<double>(steps));
  Tensor current = start;
  std::size_t moved = 0;
  for (std::size_t b0 = 0; b0 <= steps; b0 += batch) {
    const std::size_t b1 = std::min(steps + 1, b0 + batch);
    Tensor frames({b1 - b0, h, w, 3});
    for (std::size_t i = b0; i < b1; ++i) {
      const auto upto = static_cast<std::size_t>(std::llround(static_cast<double>(i) * static_cast<double>(hw) / static_cast<double>(steps)));
      for (; moved < upto; ++moved)
        for (int c = 0; c < 3; ++c) current[3 * order[moved] + c] = target[3 * order[moved] + c];
      std::copy(current.values().begin(), current.values().end(),
                frames.values().begin() + static_cast<std::ptrdiff_t>((i - b0) * hw * 3));
    }
    for (double p : class_probabilities(model.predict(frames), class_index)) curve.scores.push_back(p);
  }
  curve.auc = trapezoid_auc(curve.fractions, curve.scores);
  return curve;
}

// Pixels removed (set to black) in descending heatmap order; lower is better.
inline FidelityCurve deletion_curve(const Tensor& image, const Tensor& heatmap, const SplitModel& model,
                                    std::size_t class_index, std::size_t steps = 100) {
  return pixel_transfer_curve(image, Tensor(image.shape(), 0.0f), heatmap, model, class_index, steps);
}

// Pixels restored onto a blurred copy in descending heatmap order; higher is
// better.
inline FidelityCurve insertion_curve(const Tensor& image, const Tensor& heatmap, const SplitModel& model,
                                     std::size_t class_index, std::size_t steps = 100) {
  return pixel_transfer_curve(gaussian_blur(image), image, heatmap, model, class_index, steps);
}

inline double deletion_auc(const Tensor& image, const Tensor& heatmap, const SplitModel& model, std::size_t class_index,
                           std::size_t steps = 100) {
  return deletion_curve(image, heatmap, model, class_index, steps).auc;
}

inline double insertion_auc(const Tensor& image, const Tensor& heatmap, const SplitModel& model, std::size_t class_index,
                            std::size_t steps = 100) {
  return insertion_curve(image, heatmap, model, class_index, steps).auc;
}

}  // namespace sptd
