#pragma once

// Per-concept heatmaps (vanilla coefficient maps, RISE, C-RISE) and the
// per-image Explanation that bundles them.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "sptd/concepts.hpp"
#include "sptd/error.hpp"
#include "sptd/image_io.hpp"
#include "sptd/importance.hpp"
#include "sptd/model.hpp"
#include "sptd/parallel.hpp"
#include "sptd/rng.hpp"
#include "sptd/tensor_io.hpp"

namespace sptd {

struct RiseOptions {
  std::size_t num_masks = 2000;
  std::size_t cells = 7;  // s: side of the low-resolution grid
  double keep_prob = 0.5;
  std::uint64_t seed = 0;
  bool coverage_normalization = true;
  std::size_t batch = 50;
  std::size_t workers = 1;

  void validate(std::size_t h, std::size_t w) const {
    if (num_masks < 1) fail(ErrorCode::InvalidArgument, "num_masks must be at least 1");
    if (cells < 1 || cells > std::min(h, w)) fail(ErrorCode::InvalidArgument, "cell grid must be in [1, min(H, W)]");
    if (!(keep_prob > 0.0 && keep_prob < 1.0)) fail(ErrorCode::InvalidArgument, "keep_prob must be in (0, 1)");
    if (batch < 1) fail(ErrorCode::InvalidArgument, "batch must be at least 1");
  }

  nlohmann::json to_json() const {
    return {{"num_masks", num_masks}, {"cells", cells},          {"keep_prob", keep_prob},
            {"seed", seed},           {"coverage_normalization", coverage_normalization}};
  }
};

// Mask i of the stream: an s x s Bernoulli(p) grid, bilinearly upsampled to
// (s+1) cells and cropped at a random sub-cell offset. Depends only on
// (seed, i), so any prefix of a longer run is a shorter run.
inline Tensor rise_mask(const RiseOptions& o, std::size_t i, std::size_t h, std::size_t w) {
  CounterRng rng(derive_seed(derive_seed(o.seed, "rise"), i));
  const std::size_t s = o.cells;
  Tensor grid({s, s});
  for (float& v : grid.values()) v = rng.bernoulli(o.keep_prob) ? 1.0f : 0.0f;
  const std::size_t cell_h = (h + s - 1) / s, cell_w = (w + s - 1) / s;
  const Tensor up = resize_bilinear(grid, (s + 1) * cell_h, (s + 1) * cell_w);
  const std::size_t dy = rng.below(cell_h), dx = rng.below(cell_w);
  Tensor m({h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) m.at(y, x) = up.at(y + dy, x + dx);
  return m;
}

namespace detail {

inline Tensor masked_batch(const Tensor& image, const std::vector<Tensor>& masks) {
  const std::size_t h = image.dim(0), w = image.dim(1);
  Tensor out({masks.size(), h, w, 3});
  float* o = out.values().data();
  for (const auto& m : masks)
    for (std::size_t p = 0; p < h * w; ++p, o += 3)
      for (int c = 0; c < 3; ++c) o[c] = image[3 * p + c] * m[p];
  return out;
}

// Shared RISE loop: score_fn maps a batch of masked images to `outputs`
// scores per image (row-major). Returns per-output heatmaps accumulated in
// f64 in mask-index order.
template <class ScoreFn>
std::vector<Tensor> rise_accumulate(const Tensor& image, const RiseOptions& o, std::size_t outputs, ScoreFn score_fn) {
  if (image.rank() != 3 || image.dim(2) != 3) fail(ErrorCode::ShapeMismatch, "expected an H x W x 3 image");
  const std::size_t h = image.dim(0), w = image.dim(1), hw = h * w;
  o.validate(h, w);
  const std::size_t batches = (o.num_masks + o.batch - 1) / o.batch;
  struct Partial {
    std::vector<double> heat, cover;
  };
  std::vector<Partial> parts(batches);
  parallel_for(batches, o.workers, [&](std::size_t b) {
    const std::size_t begin = b * o.batch, end = std::min(o.num_masks, begin + o.batch);
    std::vector<Tensor> masks;
    for (std::size_t i = begin; i < end; ++i) masks.push_back(rise_mask(o, i, h, w));
    const std::vector<double> scores = score_fn(masked_batch(image, masks));
    Partial& part = parts[b];
    part.heat.assign(outputs * hw, 0.0);
    part.cover.assign(hw, 0.0);
    for (std::size_t j = 0; j < masks.size(); ++j) {
      const auto m = masks[j].data();
      for (std::size_t p = 0; p < hw; ++p) part.cover[p] += m[p];
      for (std::size_t k = 0; k < outputs; ++k) {
        const double s = scores[j * outputs + k];
        if (s == 0.0) continue;
        double* hk = part.heat.data() + k * hw;
        for (std::size_t p = 0; p < hw; ++p) hk[p] += s * m[p];
      }
    }
  });
  std::vector<double> heat(outputs * hw, 0.0), cover(hw, 0.0);
  for (const auto& part : parts) {
    for (std::size_t i = 0; i < heat.size(); ++i) heat[i] += part.heat[i];
    for (std::size_t p = 0; p < hw; ++p) cover[p] += part.cover[p];
  }
  std::vector<Tensor> out;
  const double scale = 1.0 / (o.keep_prob * static_cast<double>(o.num_masks));
  for (std::size_t k = 0; k < outputs; ++k) {
    Tensor t({h, w});
    for (std::size_t p = 0; p < hw; ++p) {
      const double v = heat[k * hw + p];
      if (o.coverage_normalization)
        t[p] = cover[p] > 0.0 ? static_cast<float>(v / cover[p]) : 0.0f;
      else
        t[p] = static_cast<float>(v * scale);
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace detail

// Saliency of `class_index` (softmax probability) for one H x W x 3 image.
inline Tensor rise_attribution(const Tensor& image, const SplitModel& model, std::size_t class_index,
                               const RiseOptions& opts) {
  if (class_index >= model.num_classes())
    fail(ErrorCode::InvalidArgument, "class index " + std::to_string(class_index) + " out of range");
  return detail::rise_accumulate(image, opts, 1, [&](const Tensor& batch) {
    return class_probabilities(model.predict(batch), class_index);
  }).front();
}

struct ConceptHeatmap {
  Tensor heat;              // H x W in [0, 1]
  bool degenerate = false;  // all-zero, could not be normalized
};

// Mean over positions of every concept's coefficient for a batch of images:
// N x K, row-major.
inline std::vector<double> pooled_concept_scores(const SplitModel& model, const ConceptBank& bank, const Tensor& images,
                                                 const SolverOptions& solver) {
  const ActivationBatch acts = model.features(images);
  const Tensor field = positionwise_coefficients(acts, bank, solver);
  const std::size_t n = acts.count(), hw = acts.positions(), K = bank.K();
  std::vector<double> out(n * K, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t k = 0; k < K; ++k) out[i * K + k] += field[(i * hw + p) * K + k];
  for (double& v : out) v /= static_cast<double>(hw);
  return out;
}

// C-RISE heatmaps for every concept from one shared mask stream.
inline std::vector<ConceptHeatmap> c_rise_attribution_all(const Tensor& image, const SplitModel& model,
                                                          const ConceptBank& bank, const RiseOptions& opts,
                                                          const SolverOptions& solver) {
  auto raw = detail::rise_accumulate(image, opts, bank.K(), [&](const Tensor& batch) {
    return pooled_concept_scores(model, bank, batch, solver);
  });
  std::vector<ConceptHeatmap> out;
  for (auto& t : raw) {
    ConceptHeatmap c{std::move(t)};
    c.degenerate = !max_normalize(c.heat);
    if (c.degenerate) std::fill(c.heat.values().begin(), c.heat.values().end(), 0.0f);
    out.push_back(std::move(c));
  }
  return out;
}

inline ConceptHeatmap c_rise_attribution(const Tensor& image, const SplitModel& model, const ConceptBank& bank,
                                         std::size_t k, const RiseOptions& opts, const SolverOptions& solver) {
  if (k >= bank.K()) fail(ErrorCode::ConceptIndexOutOfRange, "concept " + std::to_string(k) + " out of range");
  return std::move(c_rise_attribution_all(image, model, bank, opts, solver)[k]);
}

// Coefficient field of one image: hw x K.
inline Tensor image_field(const Tensor& image, const SplitModel& model, const ConceptBank& bank,
                          const SolverOptions& solver) {
  const ActivationBatch a = model.features(image.reshaped({1, image.dim(0), image.dim(1), 3}));
  return positionwise_coefficients(a, bank, solver).reshaped({a.positions(), bank.K()});
}

// Concept map U_k thresholded at 10% of its maximum, upsampled to the image
// and max-normalized.
inline ConceptHeatmap vanilla_from_field(const Tensor& field, std::size_t act_h, std::size_t act_w, std::size_t k,
                                         std::size_t h, std::size_t w) {
  if (k >= field.dim(1)) fail(ErrorCode::ConceptIndexOutOfRange, "concept " + std::to_string(k) + " out of range");
  Tensor map({act_h, act_w});
  for (std::size_t p = 0; p < act_h * act_w; ++p) map[p] = field.at(p, k);
  const float cut = 0.1f * map.max_value();
  for (float& v : map.values())
    if (v < cut) v = 0.0f;
  ConceptHeatmap out{resize_bilinear(map, h, w)};
  out.degenerate = !max_normalize(out.heat);
  if (out.degenerate) std::fill(out.heat.values().begin(), out.heat.values().end(), 0.0f);
  return out;
}

inline ConceptHeatmap vanilla_attribution(const Tensor& image, const SplitModel& model, const ConceptBank& bank,
                                          std::size_t k, const SolverOptions& solver = {}) {
  if (k >= bank.K()) fail(ErrorCode::ConceptIndexOutOfRange, "concept " + std::to_string(k) + " out of range");
  return vanilla_from_field(image_field(image, model, bank, solver), model.layout().act_h, model.layout().act_w, k,
                            image.dim(0), image.dim(1));
}

enum class AttributionMode { Vanilla, CRise };
enum class ActivationScore { Max, Mean };

inline AttributionMode parse_mode(const std::string& s) {
  if (s == "vanilla") return AttributionMode::Vanilla;
  if (s == "crise") return AttributionMode::CRise;
  fail(ErrorCode::InvalidArgument, "unknown attribution mode '" + s + "'");
}
inline std::string mode_name(AttributionMode m) { return m == AttributionMode::Vanilla ? "vanilla" : "crise"; }

struct ExplainOptions {
  AttributionMode mode = AttributionMode::CRise;
  double alpha = 0.3;
  ActivationScore score = ActivationScore::Max;
  RiseOptions rise;
  SolverOptions solver;
};

struct ActivatedConcept {
  std::size_t concept_index = 0;
  double importance = 0.0;
  double activation = 0.0;
  bool degenerate = false;
};

struct Explanation {
  std::string image_id;
  std::size_t predicted_class = 0;
  float spoof_logit = 0.0f;
  std::vector<float> logits;
  std::string mode = "crise";
  double alpha = 0.3;
  std::vector<double> activation_scores;  // a_k for every concept
  std::vector<ActivatedConcept> activated;
  std::vector<Tensor> heatmaps;  // parallel to `activated`
  nlohmann::json config;
};

// Indices k with a_k >= alpha * max_j a_j and a_k > 0. At alpha >= 1 only the
// lowest-index maximizer is kept.
inline std::vector<std::size_t> activated_concepts(const std::vector<double>& a, double alpha) {
  std::vector<std::size_t> out;
  if (a.empty()) return out;
  const auto top = static_cast<std::size_t>(std::max_element(a.begin(), a.end()) - a.begin());
  const double amax = a[top];
  if (!(amax > 0.0)) return out;
  if (alpha >= 1.0) return {top};
  for (std::size_t k = 0; k < a.size(); ++k)
    if (a[k] >= alpha * amax) out.push_back(k);
  return out;
}

inline std::vector<double> activation_scores(const Tensor& field, ActivationScore rule) {
  const std::size_t hw = field.dim(0), K = field.dim(1);
  std::vector<double> a(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t p = 0; p < hw; ++p) {
      const double v = field.at(p, k);
      a[k] = rule == ActivationScore::Max ? std::max(a[k], v) : a[k] + v;
    }
    if (rule == ActivationScore::Mean) a[k] /= static_cast<double>(hw);
  }
  return a;
}

inline Explanation explain(const Tensor& image, const std::string& image_id, const SplitModel& model,
                           const ConceptBank& bank, const ImportanceReport& report, const ExplainOptions& opts) {
  if (report.S.size() != bank.K())
    fail(ErrorCode::BankReportMismatch, "report has " + std::to_string(report.S.size()) + " indices, bank has " +
                                            std::to_string(bank.K()) + " concepts");
  if (image.rank() != 3 || image.dim(2) != 3) fail(ErrorCode::ShapeMismatch, "expected an H x W x 3 image");
  Explanation e;
  e.image_id = image_id;
  e.mode = mode_name(opts.mode);
  e.alpha = opts.alpha;
  const Tensor batch = image.reshaped({1, image.dim(0), image.dim(1), 3});
  const ActivationBatch acts = model.features(batch);
  const Tensor logits = model.head(acts);
  e.logits.assign(logits.values().begin(), logits.values().end());
  e.predicted_class = static_cast<std::size_t>(std::max_element(e.logits.begin(), e.logits.end()) - e.logits.begin());
  e.spoof_logit = e.logits[model.spoof_class_index()];

  const Tensor field = positionwise_coefficients(acts, bank, opts.solver).reshaped({acts.positions(), bank.K()});
  e.activation_scores = activation_scores(field, opts.score);
  if (e.predicted_class != model.spoof_class_index()) return e;

  std::vector<std::size_t> ks = activated_concepts(e.activation_scores, opts.alpha);
  std::stable_sort(ks.begin(), ks.end(), [&](std::size_t a, std::size_t b) { return report.S[a] > report.S[b]; });
  std::vector<ConceptHeatmap> maps;
  if (opts.mode == AttributionMode::CRise && !ks.empty()) {
    auto all = c_rise_attribution_all(image, model, bank, opts.rise, opts.solver);
    for (auto k : ks) maps.push_back(std::move(all[k]));
  } else {
    for (auto k : ks)
      maps.push_back(vanilla_from_field(field, acts.height(), acts.width(), k, image.dim(0), image.dim(1)));
  }
  for (std::size_t i = 0; i < ks.size(); ++i) {
    e.activated.push_back({ks[i], report.S[ks[i]], e.activation_scores[ks[i]], maps[i].degenerate});
    e.heatmaps.push_back(std::move(maps[i].heat));
  }
  return e;
}

inline std::string heatmap_file(std::size_t k) { return "heat_k" + std::to_string(k) + ".f32t"; }
inline std::string overlay_file(std::size_t k) { return "overlay_k" + std::to_string(k) + ".png"; }

inline nlohmann::json to_json(const Explanation& e) {
  nlohmann::json act = nlohmann::json::array();
  for (const auto& a : e.activated)
    act.push_back({{"concept", a.concept_index},
                   {"importance", a.importance},
                   {"activation", a.activation},
                   {"degenerate", a.degenerate},
                   {"heatmap", heatmap_file(a.concept_index)},
                   {"overlay", overlay_file(a.concept_index)}});
  nlohmann::json j{{"image_id", e.image_id},
                   {"predicted_class", e.predicted_class},
                   {"spoof_logit", e.spoof_logit},
                   {"logits", e.logits},
                   {"mode", e.mode},
                   {"alpha", e.alpha},
                   {"activation_scores", e.activation_scores},
                   {"activated", act}};
  if (!e.config.is_null()) j["config"] = e.config;
  return j;
}

// Writes explanation.json, one .f32t per heatmap and, when the image is
// given, a colour-mapped overlay PNG per heatmap.
inline void save_explanation(const std::filesystem::path& dir, const Explanation& e, const Tensor* image = nullptr) {
  std::filesystem::create_directories(dir);
  write_file(dir / "explanation.json", to_json(e).dump(2) + "\n");
  for (std::size_t i = 0; i < e.activated.size(); ++i) {
    const std::size_t k = e.activated[i].concept_index;
    save_tensor(dir / heatmap_file(k), e.heatmaps[i]);
    if (image) {
      const Tensor& hm = e.heatmaps[i];
      const Tensor base = image->dim(0) == hm.dim(0) && image->dim(1) == hm.dim(1)
                              ? *image
                              : resize_bilinear(*image, hm.dim(0), hm.dim(1));
      save_image_png(dir / overlay_file(k), render_overlay(base, hm));
    }
  }
}

inline Explanation load_explanation(const std::filesystem::path& dir) {
  const auto path = dir / "explanation.json";
  if (!std::filesystem::exists(path)) fail(ErrorCode::MissingExplanation, "no explanation bundle at " + dir.string());
  Explanation e;
  try {
    const auto j = nlohmann::json::parse(read_file(path));
    e.image_id = j.at("image_id").get<std::string>();
    e.predicted_class = j.at("predicted_class").get<std::size_t>();
    e.spoof_logit = j.at("spoof_logit").get<float>();
    e.logits = j.at("logits").get<std::vector<float>>();
    e.mode = j.value("mode", std::string("crise"));
    e.alpha = j.value("alpha", 0.3);
    e.activation_scores = j.value("activation_scores", std::vector<double>{});
    for (const auto& a : j.at("activated")) {
      e.activated.push_back({a.at("concept").get<std::size_t>(), a.at("importance").get<double>(),
                             a.at("activation").get<double>(), a.value("degenerate", false)});
      e.heatmaps.push_back(load_tensor(dir / a.at("heatmap").get<std::string>()));
    }
    if (j.contains("config")) e.config = j.at("config");
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::IoError, "bad explanation.json in " + dir.string() + ": " + ex.what());
  }
  return e;
}

}  // namespace sptd
