#pragma once

#include <cmath>
#include <string>

#include "balmkt/errors.hpp"
#include "balmkt/linalg.hpp"
#include "balmkt/process_spec.hpp"

namespace balmkt {

/// Coefficients of dS^i = S^i (a^i dt + dM^i), d<M^i, M^j> = c^{ij} dt, plus a bank rate r.
struct MarketParams {
  int d = 1;
  VectorSpec a;  // rate of return, per year
  MatrixSpec c;  // local covariation, per year
  ScalarSpec r;  // interest rate, per year
  Vec s0;        // initial capitalizations

  bool state_independent() const {
    return !a.depends_on_state() && !c.depends_on_state() && !r.depends_on_state();
  }
  bool all_constant() const { return a.is_constant() && c.is_constant() && r.is_constant(); }
};

/// Uniform time grid t_k = t0 + k dt, k = 0..n_steps.
struct PathGrid {
  double t0 = 0.0;
  double dt = 1e-3;
  int n_steps = 1000;

  static PathGrid from_horizon(double horizon, double dt) {
    if (!(dt > 0.0) || !(horizon > 0.0)) throw Error(ErrorCode::ShapeMismatch, "grid needs T > 0 and dt > 0");
    const auto n = static_cast<int>(std::llround(horizon / dt));
    return PathGrid{0.0, dt, std::max(n, 1)};
  }

  double time(int k) const { return t0 + k * dt; }
  double horizon() const { return t0 + n_steps * dt; }

  void validate() const {
    if (!(dt > 0.0) || n_steps <= 0) throw Error(ErrorCode::ShapeMismatch, "grid needs dt > 0 and n_steps > 0");
  }
};

/// Admissible region for portfolio weights. Every kind contains the closed simplex.
struct ConstraintSet {
  enum class Kind { ClosedSimplex, BudgetHyperplane, BoxHyperplane };

  Kind kind = Kind::ClosedSimplex;
  Vec lo;  // BoxHyperplane only
  Vec hi;

  static ConstraintSet simplex() { return {}; }
  static ConstraintSet hyperplane() { return {Kind::BudgetHyperplane, {}, {}}; }

  static ConstraintSet box(Vec lo, Vec hi) {
    if (lo.size() != hi.size()) throw Error(ErrorCode::ShapeMismatch, "box bounds differ in size");
    if (!lo.allFinite() || !hi.allFinite()) throw Error(ErrorCode::InfeasibleConstraint, "box must be bounded");
    if ((lo.array() > hi.array()).any()) throw Error(ErrorCode::InfeasibleConstraint, "box has lo > hi");
    if ((lo.array() > 0.0).any() || (hi.array() < 1.0).any()) {
      throw Error(ErrorCode::InfeasibleConstraint, "box must contain the closed simplex (lo <= 0, hi >= 1)");
    }
    return {Kind::BoxHyperplane, std::move(lo), std::move(hi)};
  }

  bool bounded() const { return kind != Kind::BudgetHyperplane; }

  Vec lower(Eigen::Index d) const { return kind == Kind::BoxHyperplane ? lo : Vec::Zero(d); }
  Vec upper(Eigen::Index d) const { return kind == Kind::BoxHyperplane ? hi : Vec::Ones(d); }

  bool contains(const Vec& x, double tol = 1e-9) const {
    if (std::abs(x.sum() - 1.0) > tol) return false;
    if (kind == Kind::BudgetHyperplane) return true;
    const Eigen::Index d = x.size();
    return ((x - lower(d)).array() >= -tol).all() && ((upper(d) - x).array() >= -tol).all();
  }
};

inline Vec uniform_portfolio(Eigen::Index d) { return Vec::Constant(d, 1.0 / static_cast<double>(d)); }

inline Vec unit_vector(Eigen::Index d, Eigen::Index i) {
  Vec e = Vec::Zero(d);
  e(i) = 1.0;
  return e;
}

/// Checks the standing assumptions on a parameter set and returns it unchanged.
///
/// Coefficients are sampled once at t = 0 with kappa equal to the uniform
/// portfolio; state-dependent specs are not exhaustively checked.
inline const MarketParams& validate_params(const MarketParams& params) {
  if (params.d < 1) throw Error(ErrorCode::DimensionMismatch, "d must be at least 1");
  const Eigen::Index d = params.d;
  if (params.s0.size() != d) throw Error(ErrorCode::DimensionMismatch, "s0 has wrong length");
  if (!params.s0.allFinite() || (params.s0.array() <= 0.0).any()) {
    throw Error(ErrorCode::NonPositiveInitialCap, "every initial capitalization must be > 0");
  }
  const Vec u = uniform_portfolio(d);
  const Vec a = params.a(0.0, u);
  if (a.size() != d) throw Error(ErrorCode::DimensionMismatch, "a has wrong length");
  if (!a.allFinite()) throw Error(ErrorCode::NonFiniteValue, "a has non-finite entries");
  const Mat c = params.c(0.0, u);
  if (c.rows() != d || c.cols() != d) throw Error(ErrorCode::DimensionMismatch, "c has wrong shape");
  if (!all_finite(c)) throw Error(ErrorCode::NonFiniteValue, "c has non-finite entries");
  if (!is_symmetric(c)) throw Error(ErrorCode::AsymmetricCovariance, "c is not symmetric");
  const double lmin = min_eigenvalue(c);
  if (lmin < -kPsdTolerance * psd_scale(c)) {
    throw Error(ErrorCode::NegativeEigenvalue, "c has eigenvalue " + std::to_string(lmin));
  }
  if (!std::isfinite(params.r(0.0, u))) throw Error(ErrorCode::NonFiniteValue, "r is not finite");
  return params;
}

}  // namespace balmkt
