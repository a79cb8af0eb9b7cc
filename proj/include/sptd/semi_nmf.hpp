#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "sptd/error.hpp"
#include "sptd/nnls.hpp"
#include "sptd/parallel.hpp"
#include "sptd/rng.hpp"
#include "sptd/tensor.hpp"

// Semi-nonnegative matrix factorization X ~= U W^T with U >= 0 and W of
// either sign.
//
// The classical formulation (Ding, Li & Jordan) writes X' ~= F G^T with
// G >= 0 and samples as columns of X'. Here samples are rows, so
// X' = X^T, F = W and G = U.

namespace sptd {

using MatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class InitMethod { Uniform, KMeans };
enum class ProjectionMethod { ActiveSet, Multiplicative };

struct SolverOptions {
  int max_iters = 500;
  double rel_tol = 1e-6;
  double epsilon = 1e-9;
  // Multiplicative U-steps per W-step; a single step converges far more
  // slowly than the exact W-step it alternates with.
  int u_steps = 10;
  std::uint64_t seed = 0;
  InitMethod init = InitMethod::Uniform;
  ProjectionMethod projection = ProjectionMethod::ActiveSet;
  std::size_t workers = 1;

  void validate() const {
    if (max_iters < 1) fail(ErrorCode::InvalidArgument, "max_iters must be >= 1");
    if (!(rel_tol > 0.0)) fail(ErrorCode::InvalidArgument, "rel_tol must be > 0");
    if (!(epsilon > 0.0)) fail(ErrorCode::InvalidArgument, "epsilon must be > 0");
    if (u_steps < 1) fail(ErrorCode::InvalidArgument, "u_steps must be >= 1");
  }
};

struct Factorization {
  Tensor W;  // C x K
  Tensor U;  // N x K, non-negative
  std::vector<double> objective_history;
  int iterations = 0;
};

inline MatrixD to_matrix(const Tensor& t) {
  if (t.rank() != 2) fail(ErrorCode::ShapeMismatch, "expected a 2-D tensor, got [" + shape_string(t.shape()) + "]");
  MatrixD m(static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
  for (std::size_t i = 0; i < t.size(); ++i) m.data()[i] = t[i];
  return m;
}

template <class Derived>
Tensor to_tensor(const Eigen::MatrixBase<Derived>& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = static_cast<float>(m(r, c));
  return t;
}

inline double semi_nmf_objective(const MatrixD& x, const MatrixD& u, const MatrixD& w) {
  return (x - u * w.transpose()).squaredNorm();
}

namespace detail {

inline MatrixD positive_part(const MatrixD& a) { return (a.cwiseAbs() + a) * 0.5; }
inline MatrixD negative_part(const MatrixD& a) { return (a.cwiseAbs() - a) * 0.5; }

// One multiplicative U-step with W held fixed. Non-negative U stays
// non-negative because every factor under the square root is non-negative.
inline void multiplicative_u_step(const MatrixD& x, const MatrixD& w, MatrixD& u, double eps) {
  const MatrixD xw = x * w;
  const MatrixD wtw = w.transpose() * w;
  const MatrixD numer = positive_part(xw) + u * negative_part(wtw);
  const MatrixD denom = negative_part(xw) + u * positive_part(wtw);
  for (Eigen::Index i = 0; i < u.rows(); ++i)
    for (Eigen::Index k = 0; k < u.cols(); ++k) u(i, k) *= std::sqrt((numer(i, k) + eps) / (denom(i, k) + eps));
}

// Exact least-squares W-step: W = X^T U (U^T U)^+.
inline MatrixD least_squares_w_step(const MatrixD& x, const MatrixD& u) {
  const MatrixD utu = u.transpose() * u;
  MatrixD inv;
  Eigen::LDLT<MatrixD> ldlt(utu);
  const double scale = std::max(1.0, utu.cwiseAbs().maxCoeff());
  if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.vectorD().minCoeff() > 1e-12 * scale)
    inv = ldlt.solve(MatrixD::Identity(utu.rows(), utu.cols()));
  else
    inv = utu.completeOrthogonalDecomposition().pseudoInverse();
  if (!inv.allFinite()) fail(ErrorCode::RankDeficientInit, "U^T U is singular and its pseudo-inverse is not finite");
  return x.transpose() * u * inv;
}

inline MatrixD uniform_init(Eigen::Index n, Eigen::Index k, std::uint64_t seed) {
  CounterRng rng(derive_seed(seed, "semi-nmf-init"));
  MatrixD u(n, k);
  for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = rng.uniform(0.1, 1.1);
  return u;
}

// K-means seeding: cluster indicator matrix plus 0.2 everywhere.
inline MatrixD kmeans_init(const MatrixD& x, Eigen::Index k, std::uint64_t seed) {
  const Eigen::Index n = x.rows();
  CounterRng rng(derive_seed(seed, "semi-nmf-kmeans"));
  MatrixD centers(k, x.cols());
  std::vector<Eigen::Index> picks;
  while (static_cast<Eigen::Index>(picks.size()) < k) {
    const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    if (std::find(picks.begin(), picks.end(), i) == picks.end() || n < k) picks.push_back(i);
  }
  for (Eigen::Index c = 0; c < k; ++c) centers.row(c) = x.row(picks[static_cast<std::size_t>(c)]);
  std::vector<Eigen::Index> label(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < 20; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < k; ++c) {
        const double d = (x.row(i) - centers.row(c)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      label[static_cast<std::size_t>(i)] = best;
    }
    MatrixD sums = MatrixD::Zero(k, x.cols());
    std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(label[static_cast<std::size_t>(i)]) += x.row(i);
      counts[static_cast<std::size_t>(label[static_cast<std::size_t>(i)])] += 1.0;
    }
    for (Eigen::Index c = 0; c < k; ++c)
      if (counts[static_cast<std::size_t>(c)] > 0) centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
  }
  MatrixD u = MatrixD::Constant(n, k, 0.2);
  for (Eigen::Index i = 0; i < n; ++i) u(i, label[static_cast<std::size_t>(i)]) += 1.0;
  return u;
}

}  // namespace detail

// Alternates the exact W-step with the multiplicative U-step until the
// relative objective change drops below rel_tol or max_iters is reached.
// objective_history[i] is ||X - U W^T||_F^2 after iteration i + 1.
inline Factorization semi_nmf_factorize(const MatrixD& x, Eigen::Index k, const SolverOptions& opts) {
  opts.validate();
  if (k < 1 || x.rows() < k)
    fail(ErrorCode::InvalidArgument, "need N >= K >= 1 (N=" + std::to_string(x.rows()) + ", K=" + std::to_string(k) + ")");
  if (!x.allFinite()) fail(ErrorCode::NonFiniteInput, "factorization input contains NaN/Inf");

  MatrixD u = opts.init == InitMethod::KMeans ? detail::kmeans_init(x, k, opts.seed)
                                              : detail::uniform_init(x.rows(), k, opts.seed);
  MatrixD w;
  Factorization out;
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < opts.max_iters; ++it) {
    w = detail::least_squares_w_step(x, u);
    for (int s = 0; s < opts.u_steps; ++s) detail::multiplicative_u_step(x, w, u, opts.epsilon);
    const double obj = semi_nmf_objective(x, u, w);
    out.objective_history.push_back(obj);
    out.iterations = it + 1;
    if (std::isfinite(prev) && std::abs(prev - obj) <= opts.rel_tol * std::max(prev, std::numeric_limits<double>::min()))
      break;
    if (obj == 0.0) break;
    prev = obj;
  }
  out.W = to_tensor(w);
  out.U = to_tensor(u);
  return out;
}

inline Factorization semi_nmf_factorize(const Tensor& x, std::size_t k, const SolverOptions& opts) {
  if (!x.all_finite()) fail(ErrorCode::NonFiniteInput, "factorization input contains NaN/Inf");
  return semi_nmf_factorize(to_matrix(x), static_cast<Eigen::Index>(k), opts);
}

// Fixed-basis projection: for every row x_i, the non-negative u_i minimizing
// ||x_i - W u_i||^2. Rows are solved independently.
class CoefficientProjector {
 public:
  CoefficientProjector(const MatrixD& w, const SolverOptions& opts)
      : w_(w), opts_(opts), nnls_(w.transpose() * w) {
    opts_.validate();
    if (w_.cols() < 1) fail(ErrorCode::ShapeMismatch, "basis needs at least one column");
    if (!w_.allFinite()) fail(ErrorCode::NonFiniteInput, "basis contains NaN/Inf");
  }

  Eigen::Index channels() const { return w_.rows(); }
  Eigen::Index concepts() const { return w_.cols(); }
  const MatrixD& basis() const { return w_; }

  // x: M x C row-major, returns M x K.
  MatrixD project(const MatrixD& x) const {
    if (x.cols() != w_.rows())
      fail(ErrorCode::ShapeMismatch, "activation rows have " + std::to_string(x.cols()) + " channels, basis has " +
                                         std::to_string(w_.rows()));
    if (!x.allFinite()) fail(ErrorCode::NonFiniteInput, "projection input contains NaN/Inf");
    if (opts_.projection == ProjectionMethod::Multiplicative) return project_multiplicative(x);
    const MatrixD b = x * w_;  // row i holds (W^T x_i)^T
    MatrixD u(x.rows(), w_.cols());
    parallel_for(static_cast<std::size_t>(x.rows()), opts_.workers, [&](std::size_t r) {
      const auto i = static_cast<Eigen::Index>(r);
      u.row(i) = nnls_.solve(b.row(i).transpose()).transpose();
    });
    return u;
  }

  Tensor project(const Tensor& x) const { return to_tensor(project(to_matrix(x))); }

 private:
  MatrixD project_multiplicative(const MatrixD& x) const {
    MatrixD u = detail::uniform_init(x.rows(), w_.cols(), opts_.seed);
    double prev = std::numeric_limits<double>::infinity();
    for (int it = 0; it < opts_.max_iters; ++it) {
      detail::multiplicative_u_step(x, w_, u, opts_.epsilon);
      const double obj = semi_nmf_objective(x, u, w_);
      if (std::isfinite(prev) && std::abs(prev - obj) <= opts_.rel_tol * std::max(prev, std::numeric_limits<double>::min())) break;
      prev = obj;
    }
    return u;
  }

  MatrixD w_;
  SolverOptions opts_;
  GramNnls nnls_;
};

inline Tensor project_coefficients(const Tensor& x, const Tensor& w, const SolverOptions& opts) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0))
    fail(ErrorCode::ShapeMismatch, "project_coefficients needs X (M x C) and W (C x K)");
  if (!x.all_finite() || !w.all_finite()) fail(ErrorCode::NonFiniteInput, "projection input contains NaN/Inf");
  return CoefficientProjector(to_matrix(w), opts).project(x);
}

}  // namespace sptd
