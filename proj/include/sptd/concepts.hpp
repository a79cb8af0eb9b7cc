#pragma once

// Concept discovery: attack subset -> grid patches -> g -> spatial average
// pool -> Semi-NMF. The basis W (C x K) is the concept bank.

#include <algorithm>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "sptd/error.hpp"
#include "sptd/image_io.hpp"
#include "sptd/manifest.hpp"
#include "sptd/model.hpp"
#include "sptd/parallel.hpp"
#include "sptd/rng.hpp"
#include "sptd/semi_nmf.hpp"
#include "sptd/tensor_io.hpp"

namespace sptd {

struct SubsetSpec {
  std::size_t r = 4;  // frames per attack video
  std::uint64_t seed = 0;
  bool attack_only = true;
  std::vector<std::string> spoof_types;  // empty: every attack type

  void validate() const {
    if (r < 1) fail(ErrorCode::InvalidArgument, "r must be at least 1");
  }
};

// Manifest entries chosen for the subset, in (video id, frame order) order.
inline std::vector<ManifestEntry> select_subset_entries(const BenchmarkManifest& manifest, const SubsetSpec& spec) {
  spec.validate();
  std::map<std::string, std::vector<const ManifestEntry*>> videos;
  for (const auto& e : manifest.entries) {
    if (spec.attack_only && (e.spoof_type == "live" || e.spoof_type == "bonafide")) continue;
    if (!spec.spoof_types.empty() &&
        std::find(spec.spoof_types.begin(), spec.spoof_types.end(), e.spoof_type) == spec.spoof_types.end())
      continue;
    videos[e.video].push_back(&e);
  }
  if (videos.empty()) fail(ErrorCode::EmptyManifest, "no attack entries match the subset filter");
  std::vector<ManifestEntry> out;
  for (auto& [video, frames] : videos) {
    std::stable_sort(frames.begin(), frames.end(), [](auto* a, auto* b) { return a->image < b->image; });
    std::vector<std::size_t> idx(frames.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t take = std::min(spec.r, frames.size());
    CounterRng rng(derive_seed(derive_seed(spec.seed, "subset"), video));
    for (std::size_t i = 0; i < take; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    idx.resize(take);
    std::sort(idx.begin(), idx.end());
    for (auto i : idx) out.push_back(*frames[i]);
  }
  return out;
}

// Loads images; every image is resized to the dims of the first one.
inline ImageBatch load_images(const BenchmarkManifest& manifest, const std::vector<ManifestEntry>& entries) {
  if (entries.empty()) fail(ErrorCode::EmptyManifest, "no images to load");
  std::vector<Tensor> imgs;
  std::vector<std::string> ids;
  for (const auto& e : entries) {
    imgs.push_back(load_image(manifest.resolve(e.image)));
    ids.push_back(image_id(e.image));
  }
  const std::size_t H = imgs.front().dim(0), W = imgs.front().dim(1);
  Tensor t({imgs.size(), H, W, 3});
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    const Tensor img = imgs[i].dim(0) == H && imgs[i].dim(1) == W ? imgs[i] : resize_bilinear(imgs[i], H, W);
    std::copy(img.values().begin(), img.values().end(), t.values().begin() + static_cast<std::ptrdiff_t>(i * H * W * 3));
  }
  return make_batch(std::move(t), std::move(ids));
}

inline ImageBatch select_subset(const BenchmarkManifest& manifest, const SubsetSpec& spec) {
  return load_images(manifest, select_subset_entries(manifest, spec));
}

struct Exemplar {
  std::string patch_id;
  double score = 0.0;
};

struct ConceptBank {
  Tensor W;  // C x K, unit-norm columns
  std::size_t act_h = 0, act_w = 0, channels = 0;
  std::string pooling = "avg";
  std::uint64_t discovery_seed = 0;
  std::uint64_t solver_seed = 0;
  PatchSpec patch_spec;
  std::size_t aux_count = 0;
  std::vector<std::vector<Exemplar>> exemplars;
  nlohmann::json config;  // run configuration, embedded verbatim when set

  std::size_t K() const { return W.dim(1); }
  std::size_t C() const { return W.dim(0); }

  void validate() const {
    if (W.rank() != 2 || W.dim(1) < 1) fail(ErrorCode::ShapeMismatch, "bank W must be C x K with K >= 1");
    if (channels != 0 && W.dim(0) != channels) fail(ErrorCode::ShapeMismatch, "bank W rows do not match channel count");
    for (std::size_t k = 0; k < K(); ++k) {
      bool nonzero = false;
      for (std::size_t c = 0; c < C(); ++c) nonzero |= W.at(c, k) != 0.0f;
      if (!nonzero) fail(ErrorCode::DegenerateConcept, "concept " + std::to_string(k) + " has an all-zero basis column");
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json ex = nlohmann::json::array();
    for (const auto& list : exemplars) {
      nlohmann::json items = nlohmann::json::array();
      for (const auto& e : list) items.push_back({{"patch", e.patch_id}, {"score", e.score}});
      ex.push_back(items);
    }
    nlohmann::json j{{"K", K()},
                     {"layer_meta", {{"h", act_h}, {"w", act_w}, {"C", channels}}},
                     {"pooling", pooling},
                     {"discovery_seed", discovery_seed},
                     {"solver_seed", solver_seed},
                     {"patch_spec", patch_spec.to_json()},
                     {"aux_count", aux_count},
                     {"exemplars", ex}};
    if (!config.is_null()) j["config"] = config;
    return j;
  }
};

inline void save_bank(const std::filesystem::path& dir, const ConceptBank& bank) {
  save_tensor(dir / "bank.f32t", bank.W);
  write_file(dir / "bank.json", bank.to_json().dump(2) + "\n");
}

inline ConceptBank load_bank(const std::filesystem::path& dir) {
  ConceptBank b;
  if (!std::filesystem::exists(dir / "bank.f32t") || !std::filesystem::exists(dir / "bank.json"))
    fail(ErrorCode::IoError, "no concept bank in " + dir.string());
  b.W = load_tensor(dir / "bank.f32t");
  try {
    const auto j = nlohmann::json::parse(read_file(dir / "bank.json"));
    const auto& lm = j.at("layer_meta");
    b.act_h = lm.at("h").get<std::size_t>();
    b.act_w = lm.at("w").get<std::size_t>();
    b.channels = lm.at("C").get<std::size_t>();
    b.pooling = j.value("pooling", std::string("avg"));
    b.discovery_seed = j.value("discovery_seed", std::uint64_t{0});
    b.solver_seed = j.value("solver_seed", std::uint64_t{0});
    b.patch_spec = PatchSpec::from_json(j.at("patch_spec"));
    b.aux_count = j.value("aux_count", std::size_t{0});
    for (const auto& list : j.at("exemplars")) {
      std::vector<Exemplar> v;
      for (const auto& e : list) v.push_back({e.at("patch").get<std::string>(), e.at("score").get<double>()});
      b.exemplars.push_back(std::move(v));
    }
    if (j.contains("config")) b.config = j.at("config");
    if (j.at("K").get<std::size_t>() != b.W.dim(1)) fail(ErrorCode::ShapeMismatch, "bank.json K disagrees with bank.f32t");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::IoError, std::string("bad bank.json: ") + e.what());
  }
  b.validate();
  return b;
}

// Mean over the h*w positions of each channel: N x h x w x C -> N x C.
inline Tensor average_pool(const ActivationBatch& acts) {
  const std::size_t n = acts.count(), pos = acts.positions(), C = acts.channels();
  Tensor out({n, C});
  std::vector<double> acc(C);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* a = acts.tensor.data().data() + i * pos * C;
    for (std::size_t p = 0; p < pos; ++p)
      for (std::size_t c = 0; c < C; ++c) acc[c] += a[p * C + c];
    for (std::size_t c = 0; c < C; ++c) out.at(i, c) = static_cast<float>(acc[c] / static_cast<double>(pos));
  }
  return out;
}

// Runs g over a batch in fixed-size chunks, chunks in parallel; row order
// follows the input regardless of worker count.
inline ActivationBatch batched_features(const SplitModel& model, const Tensor& images, std::size_t workers,
                                        std::size_t chunk = 32) {
  const std::size_t n = images.dim(0);
  const std::size_t img_sz = images.size() / n;
  const std::size_t chunks = (n + chunk - 1) / chunk;
  std::vector<Tensor> parts(chunks);
  parallel_for(chunks, workers, [&](std::size_t c) {
    const std::size_t b = c * chunk, e = std::min(n, b + chunk);
    Tensor part({e - b, images.dim(1), images.dim(2), 3},
                std::vector<float>(images.values().begin() + static_cast<std::ptrdiff_t>(b * img_sz),
                                   images.values().begin() + static_cast<std::ptrdiff_t>(e * img_sz)));
    parts[c] = model.features(part).tensor;
  });
  const auto& L = model.layout();
  Tensor out({n, L.act_h, L.act_w, L.channels});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.size();
  }
  return {std::move(out)};
}

struct DiscoveryOptions {
  std::size_t k = 15;
  PatchSpec patch_spec;  // zero patch dims: half the image side
  SolverOptions solver;
  std::size_t exemplars = 5;
  std::uint64_t subset_seed = 0;  // recorded in the bank
  std::size_t workers = 1;
};

// Intermediate products, for inspection and tests.
struct DiscoveryTrace {
  ImageBatch patches;
  std::vector<PatchBox> boxes;
  Tensor pooled;  // N_a x C
  Tensor U;       // N_a x K, rescaled to the unit-norm basis
  std::vector<double> objective_history;
};

inline ConceptBank discover_concepts(const ImageBatch& subset, const SplitModel& model, const DiscoveryOptions& opts,
                                     DiscoveryTrace* trace = nullptr) {
  subset.validate();
  PatchSpec spec = opts.patch_spec;
  if (spec.patch_h == 0 || spec.patch_w == 0) {
    const auto d = PatchSpec::defaults_for(subset.height(), subset.width());
    if (spec.patch_h == 0) spec.patch_h = d.patch_h;
    if (spec.patch_w == 0) spec.patch_w = d.patch_w;
  }
  std::vector<PatchBox> boxes;
  ImageBatch patches = extract_patches(subset, spec, model.input_h(), model.input_w(), &boxes);
  const std::size_t n_aux = patches.count();
  if (opts.k < 1 || opts.k > n_aux)
    fail(ErrorCode::KExceedsSamples, "K=" + std::to_string(opts.k) + " exceeds the " + std::to_string(n_aux) + " auxiliary patches");

  const Tensor pooled = average_pool(batched_features(model, patches.tensor, opts.workers));
  const Factorization fac = semi_nmf_factorize(pooled, opts.k, opts.solver);

  const std::size_t C = pooled.dim(1), K = opts.k;
  Tensor W = fac.W, U = fac.U;
  for (std::size_t k = 0; k < K; ++k) {
    double norm = 0.0;
    for (std::size_t c = 0; c < C; ++c) norm += static_cast<double>(W.at(c, k)) * W.at(c, k);
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) fail(ErrorCode::DegenerateConcept, "concept " + std::to_string(k) + " collapsed to a zero basis column");
    for (std::size_t c = 0; c < C; ++c) W.at(c, k) = static_cast<float>(W.at(c, k) / norm);
    for (std::size_t i = 0; i < n_aux; ++i) U.at(i, k) = static_cast<float>(U.at(i, k) * norm);
  }

  ConceptBank bank;
  bank.W = std::move(W);
  bank.act_h = model.layout().act_h;
  bank.act_w = model.layout().act_w;
  bank.channels = C;
  bank.discovery_seed = opts.subset_seed;
  bank.solver_seed = opts.solver.seed;
  bank.patch_spec = spec;
  bank.aux_count = n_aux;
  const std::size_t m = std::min(opts.exemplars, n_aux);
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<std::size_t> order(n_aux);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return U.at(a, k) > U.at(b, k); });
    std::vector<Exemplar> ex;
    for (std::size_t i = 0; i < m; ++i) ex.push_back({patches.ids[order[i]], U.at(order[i], k)});
    bank.exemplars.push_back(std::move(ex));
  }
  if (trace) {
    trace->patches = std::move(patches);
    trace->boxes = std::move(boxes);
    trace->pooled = pooled;
    trace->U = std::move(U);
    trace->objective_history = fac.objective_history;
  }
  return bank;
}

}  // namespace sptd
