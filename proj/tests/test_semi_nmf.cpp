#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "oracles.hpp"
#include "sptd/rng.hpp"
#include "sptd/semi_nmf.hpp"

using namespace sptd;

namespace {

MatrixD gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  CounterRng rng(seed);
  MatrixD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    // Box-Muller
    const double u1 = std::max(rng.uniform(), 1e-300), u2 = rng.uniform();
    m.data()[i] = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  return m;
}

void expect_monotone(const std::vector<double>& history) {
  for (std::size_t i = 1; i < history.size(); ++i)
    ASSERT_LE(history[i], history[i - 1] + 1e-9 * std::max(1.0, history[i - 1])) << "iteration " << i;
}

}  // namespace

TEST(SemiNmf, ExactRankOneIsRecovered) {
  MatrixD u(12, 1), w(6, 1);
  for (int i = 0; i < 12; ++i) u(i, 0) = 0.5 + 0.25 * i;
  for (int i = 0; i < 6; ++i) w(i, 0) = (i % 2 ? -1.0 : 1.0) * (1.0 + i);
  const MatrixD x = u * w.transpose();
  const auto fac = semi_nmf_factorize(x, 1, SolverOptions{});
  const MatrixD uu = to_matrix(fac.U), ww = to_matrix(fac.W);
  EXPECT_LE(std::sqrt(semi_nmf_objective(x, uu, ww)) / x.norm(), 1e-6);
  const double ratio = uu(0, 0) / u(0, 0);
  for (int i = 0; i < 12; ++i) EXPECT_NEAR(uu(i, 0) / u(i, 0), ratio, 1e-5 * ratio);
}

TEST(SemiNmf, ZeroMatrixHasZeroObjective) {
  const auto fac = semi_nmf_factorize(MatrixD::Zero(10, 4), 3, SolverOptions{});
  ASSERT_FALSE(fac.objective_history.empty());
  for (double v : fac.objective_history) EXPECT_EQ(v, 0.0);
}

TEST(SemiNmf, MonotoneNonNegativeAndNearOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MatrixD x = gaussian_matrix(20, 8, seed);
    SolverOptions opts;
    opts.seed = seed;
    opts.max_iters = 500;
    const auto fac = semi_nmf_factorize(x, 4, opts);
    expect_monotone(fac.objective_history);
    EXPECT_GE(fac.U.min_value(), 0.0f);
    const double ours = fac.objective_history.back();
    const double ref = oracle::projected_gradient_semi_nmf(x, 4, 10, 300, static_cast<std::uint32_t>(seed));
    EXPECT_LE(ours, 1.05 * ref) << "seed " << seed;
  }
}

TEST(SemiNmf, DeterministicForSeed) {
  const MatrixD x = gaussian_matrix(15, 6, 3);
  SolverOptions opts;
  opts.seed = 11;
  const auto a = semi_nmf_factorize(x, 3, opts);
  const auto b = semi_nmf_factorize(x, 3, opts);
  EXPECT_EQ(a.W, b.W);
  EXPECT_EQ(a.U, b.U);
  EXPECT_EQ(a.objective_history, b.objective_history);
}

TEST(SemiNmf, KMeansInitAlsoMonotone) {
  const MatrixD x = gaussian_matrix(30, 5, 8);
  SolverOptions opts;
  opts.init = InitMethod::KMeans;
  const auto fac = semi_nmf_factorize(x, 3, opts);
  expect_monotone(fac.objective_history);
  EXPECT_GE(fac.U.min_value(), 0.0f);
}

TEST(SemiNmf, RejectsBadInput) {
  EXPECT_THROW(semi_nmf_factorize(MatrixD::Zero(2, 4), 3, SolverOptions{}), Error);
  MatrixD x = MatrixD::Ones(5, 3);
  x(1, 1) = std::numeric_limits<double>::quiet_NaN();
  try {
    semi_nmf_factorize(x, 2, SolverOptions{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteInput);
  }
  SolverOptions bad;
  bad.rel_tol = 0.0;
  EXPECT_THROW(semi_nmf_factorize(MatrixD::Ones(5, 3), 2, bad), Error);
}

TEST(Projection, OrthogonalBasisExactCase) {
  MatrixD w = MatrixD::Zero(5, 3);
  w(0, 0) = 1.0;
  w(1, 1) = 0.6;
  w(2, 1) = 0.8;
  w(4, 2) = -2.0;
  CoefficientProjector proj(w, SolverOptions{});
  for (int k = 0; k < 3; ++k) {
    MatrixD x = 3.0 * w.col(k).transpose();
    const MatrixD u = proj.project(x);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(u(0, j), j == k ? 3.0 : 0.0, 1e-4);
  }
  const MatrixD zero = proj.project(MatrixD::Zero(1, 5));
  EXPECT_LE(zero.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Projection, MatchesSupportEnumerationOracle) {
  const MatrixD w = gaussian_matrix(6, 3, 77);
  const MatrixD x = gaussian_matrix(10, 6, 78);
  CoefficientProjector proj(w, SolverOptions{});
  const MatrixD u = proj.project(x);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto ref = oracle::nnls_enumerate(Eigen::MatrixXd(w), Eigen::VectorXd(x.row(i).transpose()));
    for (Eigen::Index j = 0; j < 3; ++j) EXPECT_NEAR(u(i, j), ref[j], 1e-4) << "row " << i;
  }
}

TEST(Projection, MultiplicativeModeApproachesOracle) {
  const MatrixD w = gaussian_matrix(6, 3, 5).cwiseAbs();
  const MatrixD x = gaussian_matrix(4, 6, 6).cwiseAbs();
  SolverOptions opts;
  opts.projection = ProjectionMethod::Multiplicative;
  opts.max_iters = 20000;
  opts.rel_tol = 1e-14;
  const MatrixD u = CoefficientProjector(w, opts).project(x);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto ref = oracle::nnls_enumerate(Eigen::MatrixXd(w), Eigen::VectorXd(x.row(i).transpose()));
    const double ours = (x.row(i).transpose() - w * u.row(i).transpose()).squaredNorm();
    const double best = (Eigen::VectorXd(x.row(i).transpose()) - Eigen::MatrixXd(w) * ref).squaredNorm();
    EXPECT_LE(ours, best + 1e-4);
  }
}

TEST(Projection, RowPermutationEquivariance) {
  const MatrixD w = gaussian_matrix(8, 4, 1);
  const MatrixD x = gaussian_matrix(12, 8, 2);
  std::vector<int> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::rotate(perm.begin(), perm.begin() + 5, perm.end());
  MatrixD xp(12, 8);
  for (int i = 0; i < 12; ++i) xp.row(i) = x.row(perm[i]);
  CoefficientProjector proj(w, SolverOptions{});
  const MatrixD u = proj.project(x), up = proj.project(xp);
  for (int i = 0; i < 12; ++i) EXPECT_EQ(up.row(i), u.row(perm[i]));
  EXPECT_GE(u.minCoeff(), 0.0);
}

TEST(Projection, ShapeErrors) {
  EXPECT_THROW(project_coefficients(Tensor({2, 3}), Tensor({4, 2}), SolverOptions{}), Error);
  Tensor x({1, 2}, 1.0f);
  x[0] = std::numeric_limits<float>::infinity();
  try {
    project_coefficients(x, Tensor({2, 2}, 1.0f), SolverOptions{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteInput);
  }
}
