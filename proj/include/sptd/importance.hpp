#pragma once

// Concept importance as Sobol total indices of the spoof logit with respect
// to multiplicative perturbations of per-position concept coefficients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sptd/concepts.hpp"
#include "sptd/error.hpp"
#include "sptd/model.hpp"
#include "sptd/parallel.hpp"
#include "sptd/semi_nmf.hpp"
#include "sptd/sobol_sequence.hpp"

namespace sptd {

// N x hw x K non-negative coefficients, one row per spatial position.
inline Tensor positionwise_coefficients(const ActivationBatch& acts, const ConceptBank& bank, const SolverOptions& solver) {
  if (acts.channels() != bank.C())
    fail(ErrorCode::ChannelMismatch, "activations have " + std::to_string(acts.channels()) + " channels, bank has " +
                                         std::to_string(bank.C()));
  const std::size_t n = acts.count(), hw = acts.positions(), K = bank.K();
  const CoefficientProjector proj(to_matrix(bank.W), solver);
  return proj.project(acts.tensor.reshaped({n * hw, bank.C()})).reshaped({n, hw, K});
}

// (U .* M) W^T for one image: U is hw x K, W is C x K, M has K entries.
inline Tensor reconstruct_perturbed(const Tensor& field, const Tensor& w, std::span<const double> m) {
  if (field.rank() != 2 || w.rank() != 2 || field.dim(1) != w.dim(1) || m.size() != w.dim(1))
    fail(ErrorCode::ShapeMismatch, "reconstruct_perturbed needs U (hw x K), W (C x K) and K mask values");
  const std::size_t hw = field.dim(0), K = w.dim(1), C = w.dim(0);
  Tensor out({hw, C});
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += static_cast<double>(field.at(p, k)) * m[k] * w.at(c, k);
      out.at(p, c) = static_cast<float>(acc);
    }
  return out;
}

// Saltelli pick-freeze design: A and B are the two K-column halves of a
// 2K-dimensional scrambled Sobol block; AB_k is A with column k from B.
struct MaskDesign {
  std::size_t n = 0, K = 0;
  std::vector<double> A, B;  // n x K row-major

  std::size_t rows() const { return n * (K + 2); }

  // Row r of the stacked design [A; B; AB_1; ...; AB_K].
  void row(std::size_t r, std::span<double> out) const {
    const std::size_t block = r / n, i = r % n;
    const double* a = A.data() + i * K;
    const double* b = B.data() + i * K;
    if (block == 1) {
      std::copy(b, b + K, out.begin());
      return;
    }
    std::copy(a, a + K, out.begin());
    if (block >= 2) out[block - 2] = b[block - 2];
  }
};

inline MaskDesign sobol_masks(std::size_t n, std::size_t K, std::uint64_t seed) {
  if (n < 1 || (n & (n - 1)) != 0) fail(ErrorCode::InvalidArgument, "n must be a power of two, got " + std::to_string(n));
  if (K < 1) fail(ErrorCode::InvalidArgument, "K must be at least 1");
  if (2 * K > sobol::kMaxDimension)
    fail(ErrorCode::UnsupportedDimension, "2K = " + std::to_string(2 * K) + " exceeds the Sobol dimension limit");
  const sobol::Sequence seq(2 * K);
  const auto shift = sobol::digital_shift(2 * K, seed);
  MaskDesign d;
  d.n = n;
  d.K = K;
  d.A.resize(n * K);
  d.B.resize(n * K);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      d.A[i * K + k] = seq.point(i, k, shift[k]);
      d.B[i * K + k] = seq.point(i, K + k, shift[K + k]);
    }
  return d;
}

enum class SobolMode { PerImage, Joint };

struct ImportanceOptions {
  std::size_t n = 32;
  std::uint64_t seed = 0;
  SobolMode mode = SobolMode::PerImage;
  SolverOptions solver;
  std::size_t workers = 1;
  std::size_t head_batch = 256;
};

struct ImportanceReport {
  std::vector<double> S;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double output_variance = 0.0;
  std::string mode = "per_image";
  std::vector<std::string> image_ids;
  std::vector<std::vector<double>> per_image_S;
  std::vector<std::string> skipped;  // images whose output variance vanished
  nlohmann::json config;

  nlohmann::json to_json() const {
    nlohmann::json j{{"S", S}, {"n", n}, {"seed", seed}, {"output_variance", output_variance}, {"mode", mode},
                     {"image_ids", image_ids}, {"per_image_S", per_image_S}, {"skipped", skipped}};
    if (!config.is_null()) j["config"] = config;
    return j;
  }
  static ImportanceReport from_json(const nlohmann::json& j) {
    ImportanceReport r;
    try {
      r.S = j.at("S").get<std::vector<double>>();
      r.n = j.at("n").get<std::size_t>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.output_variance = j.value("output_variance", 0.0);
      r.mode = j.value("mode", std::string("per_image"));
      r.image_ids = j.value("image_ids", std::vector<std::string>{});
      r.per_image_S = j.value("per_image_S", std::vector<std::vector<double>>{});
      r.skipped = j.value("skipped", std::vector<std::string>{});
      if (j.contains("config")) r.config = j.at("config");
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::IoError, std::string("bad importance report: ") + e.what());
    }
    return r;
  }
};

namespace detail {

// Spoof logit of h((U .* M_r) W^T) for every design row r.
inline std::vector<double> perturbed_outputs(const Tensor& field, const ConceptBank& bank, const SplitModel& model,
                                             const MaskDesign& design, std::size_t head_batch) {
  const auto& L = model.layout();
  const std::size_t hw = field.dim(0), C = bank.C(), K = bank.K(), rows = design.rows();
  std::vector<double> y(rows);
  std::vector<double> m(K);
  for (std::size_t start = 0; start < rows; start += head_batch) {
    const std::size_t count = std::min(head_batch, rows - start);
    Tensor batch({count, L.act_h, L.act_w, C});
    for (std::size_t b = 0; b < count; ++b) {
      design.row(start + b, m);
      const Tensor a = reconstruct_perturbed(field, bank.W, m);
      std::copy(a.values().begin(), a.values().end(), batch.values().begin() + static_cast<std::ptrdiff_t>(b * hw * C));
    }
    const Tensor logits = model.head({std::move(batch)});
    for (std::size_t b = 0; b < count; ++b) y[start + b] = logits.at(b, L.spoof_class_index);
  }
  return y;
}

struct JansenSums {
  std::vector<double> numer;  // sum_i (f(A_i) - f(AB_k,i))^2 per k
};

inline JansenSums jansen_sums(const std::vector<double>& y, std::size_t n, std::size_t K) {
  JansenSums s;
  s.numer.assign(K, 0.0);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t i = 0; i < n; ++i) {
      const double d = y[i] - y[(k + 2) * n + i];
      s.numer[k] += d * d;
    }
  return s;
}

// Two-pass variance for numerical stability.
inline double variance_of(const std::vector<double>& v, std::size_t count) {
  double mean = 0.0;
  for (std::size_t i = 0; i < count; ++i) mean += v[i];
  mean /= static_cast<double>(count);
  double var = 0.0;
  for (std::size_t i = 0; i < count; ++i) var += (v[i] - mean) * (v[i] - mean);
  return var / static_cast<double>(count);
}

constexpr double kMinVariance = 1e-12;

}  // namespace detail

// Total indices of a generic function of K mask values on the same design;
// the model-free form of the estimator below.
inline std::vector<double> total_sobol_indices(const std::function<double(std::span<const double>)>& f, std::size_t n,
                                               std::size_t K, std::uint64_t seed) {
  const MaskDesign design = sobol_masks(n, K, seed);
  std::vector<double> y(design.rows()), m(K);
  for (std::size_t r = 0; r < design.rows(); ++r) {
    design.row(r, m);
    y[r] = f(m);
  }
  const double var = detail::variance_of(y, 2 * n);
  if (var < detail::kMinVariance) fail(ErrorCode::VarianceZero, "output does not vary with the mask");
  const auto sums = detail::jansen_sums(y, n, K);
  std::vector<double> s(K);
  for (std::size_t k = 0; k < K; ++k) s[k] = sums.numer[k] / (2.0 * static_cast<double>(n)) / var;
  return s;
}

// Sobol total index of each concept, Jansen estimator:
//   S_k = [1/(2n) sum_i (f(A_i) - f(AB_k,i))^2] / Var(f)
// with Var(f) taken over the 2n A and B evaluations.
inline ImportanceReport sobol_importance(const ImageBatch& subset, const SplitModel& model, const ConceptBank& bank,
                                         const ImportanceOptions& opts) {
  if (opts.n < 8) fail(ErrorCode::InvalidArgument, "n must be at least 8");
  const MaskDesign design = sobol_masks(opts.n, bank.K(), opts.seed);
  const ActivationBatch acts = batched_features(model, subset.tensor, 1);
  const Tensor fields = positionwise_coefficients(acts, bank, opts.solver);
  const std::size_t N = subset.count(), K = bank.K(), hw = acts.positions(), n = opts.n;

  std::vector<std::vector<double>> outputs(N);
  parallel_for(N, opts.workers, [&](std::size_t i) {
    Tensor field({hw, K}, std::vector<float>(fields.values().begin() + static_cast<std::ptrdiff_t>(i * hw * K),
                                             fields.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * hw * K)));
    outputs[i] = detail::perturbed_outputs(field, bank, model, design, opts.head_batch);
  });

  ImportanceReport rep;
  rep.n = n;
  rep.seed = opts.seed;
  rep.image_ids = subset.ids;
  rep.S.assign(K, 0.0);
  if (opts.mode == SobolMode::PerImage) {
    rep.mode = "per_image";
    std::size_t used = 0;
    double var_sum = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double var = detail::variance_of(outputs[i], 2 * n);
      std::vector<double> s(K, 0.0);
      if (var < detail::kMinVariance) {
        rep.skipped.push_back(subset.ids[i]);
      } else {
        const auto sums = detail::jansen_sums(outputs[i], n, K);
        for (std::size_t k = 0; k < K; ++k) {
          s[k] = sums.numer[k] / (2.0 * static_cast<double>(n)) / var;
          rep.S[k] += s[k];
        }
        var_sum += var;
        ++used;
      }
      rep.per_image_S.push_back(std::move(s));
    }
    if (used == 0) fail(ErrorCode::VarianceZero, "spoof logit does not vary with any concept on any image");
    for (double& v : rep.S) v /= static_cast<double>(used);
    rep.output_variance = var_sum / static_cast<double>(used);
  } else {
    rep.mode = "joint";
    std::vector<double> all;
    std::vector<double> numer(K, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
      all.insert(all.end(), outputs[i].begin(), outputs[i].begin() + static_cast<std::ptrdiff_t>(2 * n));
      const auto sums = detail::jansen_sums(outputs[i], n, K);
      for (std::size_t k = 0; k < K; ++k) numer[k] += sums.numer[k];
    }
    const double var = detail::variance_of(all, all.size());
    if (var < detail::kMinVariance) fail(ErrorCode::VarianceZero, "spoof logit does not vary with any concept");
    for (std::size_t k = 0; k < K; ++k) rep.S[k] = numer[k] / (2.0 * static_cast<double>(n * N)) / var;
    rep.output_variance = var;
  }
  return rep;
}

}  // namespace sptd
