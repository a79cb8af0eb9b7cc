#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <vector>

namespace sptd {

// Lawson-Hanson active-set NNLS in normal-equation form:
//   minimize 0.5 u^T G u - b^T u  subject to u >= 0,
// which is min ||x - W u||^2 with G = W^T W and b = W^T x. K is small (the
// concept count), so every passive-set solve is a dense K' x K' system.
class GramNnls {
 public:
  explicit GramNnls(Eigen::MatrixXd gram) : gram_(std::move(gram)) {
    const double scale = gram_.cwiseAbs().maxCoeff();
    tol_ = 10.0 * std::numeric_limits<double>::epsilon() * std::max(scale, 1.0) * static_cast<double>(gram_.rows());
  }

  const Eigen::MatrixXd& gram() const noexcept { return gram_; }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    const Eigen::Index k = gram_.rows();
    Eigen::VectorXd u = Eigen::VectorXd::Zero(k);
    std::vector<bool> passive(static_cast<std::size_t>(k), false);
    Eigen::VectorXd grad = b;  // b - G u with u = 0
    const int max_outer = 3 * static_cast<int>(k) + 10;

    for (int outer = 0; outer < max_outer; ++outer) {
      Eigen::Index enter = -1;
      double best = tol_;
      for (Eigen::Index j = 0; j < k; ++j)
        if (!passive[j] && grad[j] > best) {
          best = grad[j];
          enter = j;
        }
      if (enter < 0) break;
      passive[enter] = true;

      for (int inner = 0; inner <= static_cast<int>(k); ++inner) {
        Eigen::VectorXd s = solve_passive(b, passive);
        bool feasible = true;
        for (Eigen::Index j = 0; j < k; ++j)
          if (passive[j] && s[j] <= tol_) feasible = false;
        if (feasible) {
          u = s;
          break;
        }
        double alpha = 1.0;
        for (Eigen::Index j = 0; j < k; ++j)
          if (passive[j] && s[j] <= tol_) alpha = std::min(alpha, u[j] / (u[j] - s[j]));
        u += alpha * (s - u);
        for (Eigen::Index j = 0; j < k; ++j)
          if (passive[j] && u[j] <= tol_) {
            passive[j] = false;
            u[j] = 0.0;
          }
      }
      grad = b - gram_ * u;
    }
    return u.cwiseMax(0.0);
  }

 private:
  Eigen::VectorXd solve_passive(const Eigen::VectorXd& b, const std::vector<bool>& passive) const {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < gram_.rows(); ++j)
      if (passive[j]) idx.push_back(j);
    const auto m = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd g(m, m);
    Eigen::VectorXd rhs(m);
    for (Eigen::Index r = 0; r < m; ++r) {
      rhs[r] = b[idx[r]];
      for (Eigen::Index c = 0; c < m; ++c) g(r, c) = gram_(idx[r], idx[c]);
    }
    Eigen::VectorXd sol;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(g);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.vectorD().minCoeff() > tol_)
      sol = ldlt.solve(rhs);
    else
      sol = g.completeOrthogonalDecomposition().solve(rhs);
    Eigen::VectorXd full = Eigen::VectorXd::Zero(gram_.rows());
    for (Eigen::Index r = 0; r < m; ++r) full[idx[r]] = sol[r];
    return full;
  }

  Eigen::MatrixXd gram_;
  double tol_ = 0.0;
};

}  // namespace sptd
