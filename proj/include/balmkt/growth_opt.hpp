#pragma once

#include <cmath>
#include <optional>
#include <utility>

#include "balmkt/errors.hpp"
#include "balmkt/linalg.hpp"
#include "balmkt/market_model.hpp"
#include "balmkt/qp.hpp"

namespace balmkt {

/// Condition number above which c is treated as singular.
inline constexpr double kMaxConditionNumber = 1e12;

struct GrowthProblem {
  Vec a;       // rate of return, per year
  Mat c;       // local covariation, per year
  double r = 0.0;
  ConstraintSet constraint = ConstraintSet::simplex();
};

struct GrowthSolution {
  Vec rho;
  double g_star = 0.0;
  std::optional<double> implied_rate;  // budget-hyperplane problems only
  double kkt_residual = 0.0;
};

/// Drift of log-wealth: r + <pi, a - r1> - 0.5 <pi, c pi>.
inline double growth_rate(const Eigen::Ref<const Vec>& pi, const Eigen::Ref<const Vec>& a, const Mat& c, double r) {
  const Eigen::Index d = a.size();
  if (pi.size() != d || c.rows() != d || c.cols() != d) {
    throw Error(ErrorCode::ShapeMismatch, "growth_rate shapes disagree");
  }
  // Quadratic form by hand: this runs once per path step, and c * pi would allocate.
  double quad = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) quad += pi(j) * c.col(j).dot(pi);
  return r + pi.dot(a - Vec::Constant(d, r)) - 0.5 * quad;
}

/// Shadow rate making c^{-1}(a - r1) a budget portfolio: (<a, c^-1 1> - 1) / <1, c^-1 1>.
inline double implied_interest_rate(const Vec& a, const Mat& c) {
  if (c.rows() != a.size() || c.cols() != a.size()) throw Error(ErrorCode::ShapeMismatch, "implied rate shapes");
  Eigen::SelfAdjointEigenSolver<Mat> es(c, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  const double lmax = es.eigenvalues().maxCoeff();
  if (!(lmin > 0.0) || lmax / lmin > kMaxConditionNumber) {
    throw Error(ErrorCode::SingularCovariance, "c is singular or too ill-conditioned; use the bordered KKT solve");
  }
  const Eigen::LLT<Mat> llt(c);
  const Vec c_inv_one = llt.solve(Vec::Ones(a.size()));
  return (a.dot(c_inv_one) - 1.0) / c_inv_one.sum();
}

/// Growth-optimal portfolio on {<x,1> = 1}: solves [[c, 1], [1', 0]] [rho; r] = [a; 1].
/// Singular c is fine as long as the bordered system is consistent; among
/// multiple optimizers the minimum-norm one is returned.
inline GrowthSolution growth_optimal_hyperplane(const Vec& a, const Mat& c) {
  const Eigen::Index d = a.size();
  if (c.rows() != d || c.cols() != d) throw Error(ErrorCode::ShapeMismatch, "hyperplane problem shapes");
  Mat k = Mat::Zero(d + 1, d + 1);
  k.topLeftCorner(d, d) = c;
  k.topRightCorner(d, 1).setOnes();
  k.bottomLeftCorner(1, d).setOnes();
  Vec rhs(d + 1);
  rhs << a, 1.0;
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(k);
  cod.setThreshold(1.0 / kMaxConditionNumber);
  const Vec sol = cod.solve(rhs);
  const double scale = std::max({1.0, max_abs(k), rhs.cwiseAbs().maxCoeff()});
  const double residual = (k * sol - rhs).cwiseAbs().maxCoeff();
  if (!sol.allFinite() || residual > 1e-9 * scale) {
    throw Error(ErrorCode::NoSolution, "bordered KKT system is inconsistent (unbounded growth on the hyperplane)");
  }
  GrowthSolution out;
  out.rho = sol.head(d);
  out.implied_rate = sol(d);
  out.g_star = growth_rate(out.rho, a, c, *out.implied_rate);
  out.kkt_residual = residual;
  return out;
}

namespace detail {

// Among optimizers of the QP, pick the one of minimum Euclidean norm. The
// optimal face is {feasible x : H x = H x*, q'x = q'x*}.
inline Vec min_norm_optimizer(const Mat& h, const Vec& q, const Vec& lo, const Vec& hi, const Vec& x_star) {
  const Eigen::Index n = q.size();
  Mat rows(n + 2, n);
  rows.row(0).setOnes();
  rows.middleRows(1, n) = h;
  rows.row(n + 1) = q.transpose();
  Eigen::JacobiSVD<Mat> svd(rows, Eigen::ComputeFullV);
  const Vec& s = svd.singularValues();
  const double cutoff = 1e-10 * std::max(1.0, s(0));
  Eigen::Index rank = 0;
  while (rank < s.size() && s(rank) > cutoff) ++rank;
  if (rank >= n) return x_star;  // optimal face is a point
  const Mat e = svd.matrixV().leftCols(rank).transpose();
  const Vec f = e * x_star;
  ActiveSetQp projection(Mat::Identity(n, n), Vec::Zero(n), e, f, lo, hi);
  const QpResult res = projection.solve(x_star);
  return res.converged ? res.x : x_star;
}

}  // namespace detail

/// Maximizes the growth rate over a bounded constraint set (closed simplex or
/// box intersected with the budget hyperplane). Budget-hyperplane problems are
/// forwarded to growth_optimal_hyperplane.
inline GrowthSolution growth_optimal_constrained(const GrowthProblem& problem) {
  const Eigen::Index d = problem.a.size();
  if (problem.c.rows() != d || problem.c.cols() != d) throw Error(ErrorCode::ShapeMismatch, "growth problem shapes");
  if (problem.constraint.kind == ConstraintSet::Kind::BudgetHyperplane) {
    GrowthSolution s = growth_optimal_hyperplane(problem.a, problem.c);
    s.g_star = growth_rate(s.rho, problem.a, problem.c, problem.r);
    return s;
  }
  const Vec lo = problem.constraint.lower(d);
  const Vec hi = problem.constraint.upper(d);
  if (lo.size() != d || hi.size() != d) throw Error(ErrorCode::ShapeMismatch, "box bounds have wrong length");
  if (lo.sum() > 1.0 + 1e-12 || hi.sum() < 1.0 - 1e-12) {
    throw Error(ErrorCode::InfeasibleConstraint, "box does not meet the budget hyperplane");
  }
  const Vec q = problem.a - Vec::Constant(d, problem.r);
  ActiveSetQp qp(problem.c, q, Mat::Ones(1, d), Vec::Ones(1), lo, hi);
  // The uniform portfolio lies in the simplex, hence in every admissible box.
  QpResult res = qp.solve(uniform_portfolio(d));
  if (!res.converged) throw Error(ErrorCode::NoSolution, "active-set iteration limit reached");
  Vec rho = detail::min_norm_optimizer(problem.c, q, lo, hi, res.x);
  if (qp.objective(rho) > res.objective + 1e-12 * std::max(1.0, std::abs(res.objective))) rho = res.x;

  GrowthSolution out;
  out.rho = std::move(rho);
  out.g_star = growth_rate(out.rho, problem.a, problem.c, problem.r);
  out.kkt_residual = res.kkt_residual;
  return out;
}

/// <pi - rho, a - r1 - c rho>. Nonpositive for every admissible pi exactly when
/// rho is growth-optimal (V^pi / V^rho is then a supermartingale).
inline double numeraire_condition(const Vec& pi, const Vec& rho, const Vec& a, const Mat& c, double r) {
  if (pi.size() != rho.size() || rho.size() != a.size()) throw Error(ErrorCode::ShapeMismatch, "numeraire shapes");
  return (pi - rho).dot(a - Vec::Constant(a.size(), r) - c * rho);
}

struct BalanceFit {
  double r_hat = 0.0;
  double residual = 0.0;
};

/// Least-squares fit of a - c kappa = r 1. Zero residual means the coefficients
/// are perfectly balanced at this state.
inline BalanceFit perfect_balance_residual(const Vec& kappa, const Vec& a, const Mat& c) {
  const Vec gap = a - c * kappa;
  BalanceFit fit;
  fit.r_hat = gap.mean();
  fit.residual = (gap - Vec::Constant(gap.size(), fit.r_hat)).norm();
  return fit;
}

}  // namespace balmkt
