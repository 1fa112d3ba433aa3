#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "balmkt/errors.hpp"
#include "balmkt/linalg.hpp"

namespace balmkt {

struct QpResult {
  Vec x;
  Vec equality_multipliers;  // lambda with H x - q + E^T lambda = bound reduced costs
  double objective = 0.0;    // 0.5 x'Hx - q'x
  double kkt_residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Convex QP   minimize 0.5 x'Hx - q'x   s.t.  E x = f,  lo <= x <= hi
/// with H symmetric PSD (possibly singular) and a finite box.
///
/// Primal active-set method started from a feasible x0. The working set only
/// holds bounds; each iteration solves the equality-constrained subproblem on
/// the free coordinates with a rank-revealing factorization. When that
/// subproblem is inconsistent, its least-squares residual is a zero-curvature
/// descent direction and the step runs to the first blocking bound.
class ActiveSetQp {
 public:
  ActiveSetQp(Mat h, Vec q, Mat e, Vec f, Vec lo, Vec hi)
      : h_(std::move(h)), q_(std::move(q)), e_(std::move(e)), f_(std::move(f)), lo_(std::move(lo)), hi_(std::move(hi)) {
    const Eigen::Index n = q_.size();
    if (h_.rows() != n || h_.cols() != n || e_.cols() != n || e_.rows() != f_.size() || lo_.size() != n ||
        hi_.size() != n) {
      throw Error(ErrorCode::ShapeMismatch, "inconsistent QP dimensions");
    }
    scale_ = std::max({1.0, max_abs(h_), q_.size() ? q_.cwiseAbs().maxCoeff() : 0.0});
  }

  double objective(const Vec& x) const { return 0.5 * x.dot(h_ * x) - q_.dot(x); }

  QpResult solve(Vec x, int max_iterations = -1) const {
    const Eigen::Index n = q_.size();
    if (max_iterations < 0) max_iterations = static_cast<int>(50 * n + 100);
    const double feas_tol = 1e-9;
    if ((e_ * x - f_).cwiseAbs().maxCoeff() > feas_tol || ((x - lo_).array() < -feas_tol).any() ||
        ((hi_ - x).array() < -feas_tol).any()) {
      throw Error(ErrorCode::InfeasibleConstraint, "QP start point is infeasible");
    }
    x = x.cwiseMax(lo_).cwiseMin(hi_);
    std::vector<int> status(static_cast<std::size_t>(n), 0);  // -1 at lo, +1 at hi, 0 free

    QpResult result;
    Vec lambda = Vec::Zero(e_.rows());
    for (int iter = 0; iter < max_iterations; ++iter) {
      result.iterations = iter + 1;
      const std::vector<Eigen::Index> free = free_indices(status);
      const Vec g = h_ * x - q_;
      Subproblem sub = solve_subproblem(free, g);
      const double step_norm = sub.p.size() ? sub.p.cwiseAbs().maxCoeff() : 0.0;

      if (sub.consistent && step_norm <= 1e-13 * std::max(1.0, x.cwiseAbs().maxCoeff())) {
        lambda = sub.lambda;
        const Vec reduced = g + e_.transpose() * lambda;
        Eigen::Index release = -1;
        double worst = 1e-11 * scale_;
        for (Eigen::Index i = 0; i < n; ++i) {
          const int s = status[static_cast<std::size_t>(i)];
          const double violation = s < 0 ? -reduced(i) : (s > 0 ? reduced(i) : 0.0);
          if (violation > worst) {
            worst = violation;
            release = i;
          }
        }
        if (release < 0) {
          result.converged = true;
          break;
        }
        status[static_cast<std::size_t>(release)] = 0;
        continue;
      }

      // Ratio test along p (full step allowed only for a consistent Newton step).
      double alpha = sub.consistent ? 1.0 : std::numeric_limits<double>::infinity();
      Eigen::Index blocking = -1;
      int blocking_side = 0;
      for (std::size_t k = 0; k < free.size(); ++k) {
        const Eigen::Index i = free[k];
        const double pi = sub.p(static_cast<Eigen::Index>(k));
        if (pi < 0.0) {
          const double a = (lo_(i) - x(i)) / pi;
          if (a < alpha) alpha = a, blocking = i, blocking_side = -1;
        } else if (pi > 0.0) {
          const double a = (hi_(i) - x(i)) / pi;
          if (a < alpha) alpha = a, blocking = i, blocking_side = +1;
        }
      }
      if (!std::isfinite(alpha)) throw Error(ErrorCode::NoSolution, "QP objective is unbounded below");
      alpha = std::max(alpha, 0.0);
      for (std::size_t k = 0; k < free.size(); ++k) x(free[k]) += alpha * sub.p(static_cast<Eigen::Index>(k));
      if (blocking >= 0) {
        x(blocking) = blocking_side < 0 ? lo_(blocking) : hi_(blocking);
        status[static_cast<std::size_t>(blocking)] = blocking_side;
      }
    }
    result.x = x;
    result.equality_multipliers = lambda;
    result.objective = objective(x);
    result.kkt_residual = kkt_residual(x, lambda, status);
    return result;
  }

  /// Stationarity, sign and feasibility violations at (x, lambda) given bound status.
  double kkt_residual(const Vec& x, const Vec& lambda, const std::vector<int>& status) const {
    const Vec reduced = h_ * x - q_ + e_.transpose() * lambda;
    double res = e_.rows() ? (e_ * x - f_).cwiseAbs().maxCoeff() : 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const int s = status[static_cast<std::size_t>(i)];
      if (s == 0) res = std::max(res, std::abs(reduced(i)));
      if (s < 0) res = std::max(res, std::max(0.0, -reduced(i)));
      if (s > 0) res = std::max(res, std::max(0.0, reduced(i)));
      res = std::max({res, lo_(i) - x(i), x(i) - hi_(i)});
    }
    return res;
  }

 private:
  struct Subproblem {
    Vec p;       // step on the free coordinates
    Vec lambda;  // equality multipliers
    bool consistent = true;
  };

  static std::vector<Eigen::Index> free_indices(const std::vector<int>& status) {
    std::vector<Eigen::Index> free;
    for (std::size_t i = 0; i < status.size(); ++i)
      if (status[i] == 0) free.push_back(static_cast<Eigen::Index>(i));
    return free;
  }

  // [[H_FF, E_F^T], [E_F, 0]] [p; lambda] = [-g_F; 0]
  Subproblem solve_subproblem(const std::vector<Eigen::Index>& free, const Vec& g) const {
    const auto nf = static_cast<Eigen::Index>(free.size());
    const Eigen::Index m = e_.rows();
    Mat k = Mat::Zero(nf + m, nf + m);
    Vec rhs = Vec::Zero(nf + m);
    for (Eigen::Index a = 0; a < nf; ++a) {
      for (Eigen::Index b = 0; b < nf; ++b) k(a, b) = h_(free[a], free[b]);
      for (Eigen::Index r = 0; r < m; ++r) {
        k(a, nf + r) = e_(r, free[a]);
        k(nf + r, a) = e_(r, free[a]);
      }
      rhs(a) = -g(free[a]);
    }
    Subproblem sub;
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(k);
    cod.setThreshold(1e-12);
    const Vec sol = cod.solve(rhs);
    const Vec residual = rhs - k * sol;
    const double rhs_scale = std::max(1.0, rhs.size() ? rhs.cwiseAbs().maxCoeff() : 0.0);
    sub.p = sol.head(nf);
    sub.lambda = sol.tail(m);
    if (residual.size() && residual.cwiseAbs().maxCoeff() > 1e-10 * rhs_scale * std::max(1.0, max_abs(k))) {
      // The residual lies in null(K): H z = 0, E z = 0 and g'z < 0.
      sub.consistent = false;
      sub.p = residual.head(nf);
    }
    return sub;
  }

  Mat h_;
  Vec q_;
  Mat e_;
  Vec f_;
  Vec lo_;
  Vec hi_;
  double scale_ = 1.0;
};

}  // namespace balmkt
