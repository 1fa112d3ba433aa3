#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "balmkt/errors.hpp"
#include "balmkt/growth_opt.hpp"
#include "balmkt/linalg.hpp"
#include "balmkt/market_model.hpp"
#include "balmkt/sde_engine.hpp"

namespace balmkt {

/// Drift of the relative capitalizations, kappa^i <e_i - kappa, a - c kappa>.
/// Identically zero exactly when a - c kappa is a multiple of 1.
inline Vec relcap_drift(const Vec& kappa, const Vec& a, const Mat& c) {
  const Vec gap = a - c * kappa;
  const double mean_gap = kappa.dot(gap);
  return kappa.cwiseProduct(gap - Vec::Constant(gap.size(), mean_gap));
}

/// Coefficients a = c kappa + r 1, which make every kappa^i a martingale.
inline VectorSpec balanced_drift(const MatrixSpec& c, const ScalarSpec& r) {
  return VectorSpec::state_function([c, r](double t, const Vec& kappa) -> Vec {
    return eval_spec(c, t, kappa) * kappa + Vec::Constant(kappa.size(), r(t, kappa));
  });
}

inline MarketParams balanced_market(const MatrixSpec& c, const ScalarSpec& r, const Vec& s0) {
  return MarketParams{static_cast<int>(s0.size()), balanced_drift(c, r), c, r, s0};
}

/// A single simulated path together with its market. kappa is full resolution.
struct PathView {
  const MarketParams& params;
  const PathGrid& grid;
  const Mat& kappa;  // d x (n_steps + 1)
  const Mat& dW;     // d x n_steps
};

/// Coefficients at one grid step, with the growth-optimal portfolio when requested.
struct StepCoefficients {
  Vec a;
  Mat c;
  Mat sigma;
  double r = 0.0;
  Vec rho;
  double g_star = 0.0;
};

/// Evaluates (a, c, r) along a path. Everything is computed once when the
/// coefficients are constant; sigma is cached whenever c is constant.
class CoefficientEvaluator {
 public:
  struct Needs {
    bool sigma = false;
    bool rho = false;
  };

  CoefficientEvaluator(const MarketParams& params, Needs needs, ConstraintSet constraint = ConstraintSet::simplex())
      : params_(params), needs_(needs), constraint_(std::move(constraint)) {
    if (params.c.is_constant() && needs_.sigma) {
      current_.c = params.c.constant_value();
      current_.sigma = psd_factor(current_.c);
      sigma_cached_ = true;
    }
  }

  const StepCoefficients& at(double t, const Eigen::Ref<const Vec>& kappa_ref) {
    if (frozen_) return current_;
    const Vec kappa = kappa_ref;
    current_.a = eval_spec(params_.a, t, kappa);
    current_.c = eval_spec(params_.c, t, kappa);
    current_.r = params_.r(t, kappa);
    if (needs_.sigma && !sigma_cached_) current_.sigma = psd_factor(current_.c);
    if (needs_.rho) {
      GrowthSolution s = growth_optimal_constrained({current_.a, current_.c, current_.r, constraint_});
      current_.rho = std::move(s.rho);
      current_.g_star = s.g_star;
    }
    frozen_ = params_.all_constant();
    return current_;
  }

 private:
  const MarketParams& params_;
  Needs needs_;
  ConstraintSet constraint_;
  StepCoefficients current_;
  bool sigma_cached_ = false;
  bool frozen_ = false;
};

namespace detail {

inline void check_path(const PathView& path) {
  const Eigen::Index d = path.params.d;
  if (path.kappa.rows() != d || path.kappa.cols() != path.grid.n_steps + 1) {
    throw Error(ErrorCode::ShapeMismatch, "kappa path must be d x (n_steps + 1)");
  }
}

inline void check_increments(const PathView& path) {
  if (path.dW.rows() != path.params.d || path.dW.cols() != path.grid.n_steps) {
    throw Error(ErrorCode::ShapeMismatch, "driver increments must be d x n_steps");
  }
}

// Increments of L are nonnegative by construction; tiny negative values are rounding.
inline double clip_increment(double x) {
  if (x >= 0.0) return x;
  if (x > -1e-12) return 0.0;
  throw Error(ErrorCode::NoSolution, "growth optimizer returned a rate below the market's");
}

}  // namespace detail

/// Per-step loss-of-balance rates g* - g^kappa over the closed simplex (length n_steps).
inline Vec balance_increments(const PathView& path) {
  detail::check_path(path);
  CoefficientEvaluator eval(path.params, {.sigma = false, .rho = true});
  Vec rate(path.grid.n_steps);
  for (int k = 0; k < path.grid.n_steps; ++k) {
    const auto kappa = path.kappa.col(k);
    const auto& co = eval.at(path.grid.time(k), kappa);
    rate(k) = detail::clip_increment(co.g_star - growth_rate(kappa, co.a, co.c, co.r));
  }
  return rate;
}

/// L_t on the grid: L_0 = 0, L_{k+1} = L_k + (g* - g^kappa)_k dt.
inline Vec loss_of_balance(const PathView& path) {
  const Vec rate = balance_increments(path);
  Vec l(rate.size() + 1);
  l(0) = 0.0;
  for (Eigen::Index k = 0; k < rate.size(); ++k) l(k + 1) = l(k) + rate(k) * path.grid.dt;
  return l;
}

enum class Outcome { Balanced, Unbalanced, Indeterminate };

inline std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::Balanced: return "Balanced";
    case Outcome::Unbalanced: return "Unbalanced";
    case Outcome::Indeterminate: return "Indeterminate";
  }
  return "?";
}

struct ClassifierThresholds {
  double eps_slope = 1e-3;  // per year
  double l_cap = 50.0;
};

struct BalanceReport {
  Vec l_path;
  Outcome classification = Outcome::Indeterminate;
  double l_terminal = 0.0;
  double slope_tail = 0.0;  // average dL/dt over the final quarter
};

/// Finite-horizon proxy for the balanced / unbalanced split, from the tail slope of L.
inline BalanceReport classify_outcome(Vec l_path, const PathGrid& grid, const ClassifierThresholds& th = {}) {
  if (l_path.size() != grid.n_steps + 1) throw Error(ErrorCode::ShapeMismatch, "L path must have n_steps + 1 entries");
  BalanceReport rep;
  const int n = grid.n_steps;
  const int k0 = static_cast<int>(std::lround(0.75 * n));
  rep.l_terminal = l_path(n);
  const double span = (n - k0) * grid.dt;
  rep.slope_tail = span > 0.0 ? (l_path(n) - l_path(k0)) / span : 0.0;
  if (rep.slope_tail < th.eps_slope && rep.l_terminal < th.l_cap) {
    rep.classification = Outcome::Balanced;
  } else if (rep.slope_tail > 10.0 * th.eps_slope) {
    rep.classification = Outcome::Unbalanced;
  }
  rep.l_path = std::move(l_path);
  return rep;
}

inline BalanceReport balance_report(const PathView& path, const ClassifierThresholds& th = {}) {
  return classify_outcome(loss_of_balance(path), path.grid, th);
}

/// log V^pi on the grid, V_0 = 1, by the log-Euler scheme
/// d log V = (r + <pi, a - r 1> - <pi, c pi>/2) dt + <pi, sigma dW>,
/// driven by the path's own increments. pi_of(k, t, kappa, coefficients) gives the weights.
template <class Policy>
Vec log_wealth_path_with(const PathView& path, Policy&& pi_of, bool need_rho) {
  detail::check_path(path);
  detail::check_increments(path);
  const Eigen::Index d = path.params.d;
  CoefficientEvaluator eval(path.params, {.sigma = true, .rho = need_rho});
  Vec logv(path.grid.n_steps + 1);
  logv(0) = 0.0;
  for (int k = 0; k < path.grid.n_steps; ++k) {
    const double t = path.grid.time(k);
    const Vec kappa = path.kappa.col(k);
    const auto& co = eval.at(t, kappa);
    const Vec pi = pi_of(k, t, kappa, co);
    if (pi.size() != d) throw Error(ErrorCode::ShapeMismatch, "portfolio has wrong length");
    const double drift = co.r + pi.dot(co.a - Vec::Constant(d, co.r)) - 0.5 * pi.dot(co.c * pi);
    logv(k + 1) = logv(k) + drift * path.grid.dt + pi.dot(co.sigma * path.dW.col(k));
  }
  return logv;
}

inline Vec log_wealth_path(const VectorSpec& pi_spec, const PathView& path) {
  return log_wealth_path_with(
      path, [&](int, double t, const Vec& kappa, const StepCoefficients&) { return eval_spec(pi_spec, t, kappa); },
      false);
}

/// V^pi on the grid, V_0 = 1.
inline Vec wealth_path(const VectorSpec& pi_spec, const PathView& path) {
  return log_wealth_path(pi_spec, path).array().exp().matrix();
}

/// log V^rho for the per-step growth-optimal portfolio over the closed simplex.
inline Vec log_growth_optimal_wealth(const PathView& path) {
  return log_wealth_path_with(
      path, [](int, double, const Vec&, const StepCoefficients& co) { return co.rho; }, true);
}

inline VectorSpec market_portfolio() {
  return VectorSpec::state_function([](double, const Vec& kappa) { return kappa; });
}

struct RelativeWealthDecomposition {
  Vec drift;       // -L_t
  Vec martingale;  // int <kappa - rho, sigma dW>
  Vec direct;      // log(V^kappa / V^rho) from the two wealth paths

  double max_defect() const { return (drift + martingale - direct).cwiseAbs().maxCoeff(); }
};

/// The two summands of log(V^kappa / V^rho), plus the directly computed ratio.
inline RelativeWealthDecomposition log_relative_wealth_decomposition(const PathView& path) {
  detail::check_path(path);
  detail::check_increments(path);
  const int n = path.grid.n_steps;
  CoefficientEvaluator eval(path.params, {.sigma = true, .rho = true});
  RelativeWealthDecomposition out;
  out.drift.resize(n + 1);
  out.martingale.resize(n + 1);
  out.drift(0) = out.martingale(0) = 0.0;
  for (int k = 0; k < n; ++k) {
    const Vec kappa = path.kappa.col(k);
    const auto& co = eval.at(path.grid.time(k), kappa);
    const double rate = detail::clip_increment(co.g_star - growth_rate(kappa, co.a, co.c, co.r));
    out.drift(k + 1) = out.drift(k) - rate * path.grid.dt;
    out.martingale(k + 1) = out.martingale(k) + (kappa - co.rho).dot(co.sigma * path.dW.col(k));
  }
  out.direct = log_wealth_path(market_portfolio(), path) - log_growth_optimal_wealth(path);
  return out;
}

/// Cumulative d^{i|j}_t = int (|g^{e_i} - g^{e_j}| + c^{i|j} / 2) dt on the grid.
inline Vec pairwise_distance_path(const PathView& path, int i, int j) {
  detail::check_path(path);
  const int d = path.params.d;
  if (i < 0 || j < 0 || i >= d || j >= d || i == j) throw Error(ErrorCode::ShapeMismatch, "invalid company pair");
  CoefficientEvaluator eval(path.params, {});
  Vec dist(path.grid.n_steps + 1);
  dist(0) = 0.0;
  for (int k = 0; k < path.grid.n_steps; ++k) {
    const auto& co = eval.at(path.grid.time(k), path.kappa.col(k));
    // r cancels in g^{e_i} - g^{e_j}.
    const double gap = (co.a(i) - 0.5 * co.c(i, i)) - (co.a(j) - 0.5 * co.c(j, j));
    const double cij = co.c(i, i) + co.c(j, j) - 2.0 * co.c(i, j);
    dist(k + 1) = dist(k) + (std::abs(gap) + 0.5 * cij) * path.grid.dt;
  }
  return dist;
}

inline double pairwise_distance(const PathView& path, int i, int j) {
  return pairwise_distance_path(path, i, j)(path.grid.n_steps);
}

/// Symmetric matrix of terminal pairwise distances, zero diagonal.
inline Mat distance_matrix(const PathView& path) {
  const int d = path.params.d;
  Mat dist = Mat::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) dist(i, j) = dist(j, i) = pairwise_distance(path, i, j);
  return dist;
}

struct Partition {
  std::vector<std::vector<int>> classes;
  // Some pair joined only through the closure has distance >= threshold.
  bool intransitive = false;
};

/// Connected components of {(i, j) : D(i, j) < threshold}.
inline Partition equivalence_classes(const Mat& dist, double threshold = 25.0) {
  if (dist.rows() != dist.cols()) throw Error(ErrorCode::ShapeMismatch, "distance matrix must be square");
  const int d = static_cast<int>(dist.rows());
  std::vector<int> parent(d);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j)
      if (dist(i, j) < threshold) parent[find(i)] = find(j);

  Partition out;
  std::vector<int> slot(d, -1);
  for (int i = 0; i < d; ++i) {
    const int root = find(i);
    if (slot[root] < 0) {
      slot[root] = static_cast<int>(out.classes.size());
      out.classes.emplace_back();
    }
    out.classes[slot[root]].push_back(i);
  }
  for (const auto& cls : out.classes)
    for (std::size_t x = 0; x < cls.size(); ++x)
      for (std::size_t y = x + 1; y < cls.size(); ++y)
        if (dist(cls[x], cls[y]) >= threshold) out.intransitive = true;
  return out;
}

/// Terminal state and the range of each coordinate over the final quarter of the horizon.
struct TailSummary {
  Vec terminal;
  Vec tail_min;
  Vec tail_max;

  double max_range() const { return (tail_max - tail_min).maxCoeff(); }
};

inline int tail_start_step(const PathGrid& grid) { return static_cast<int>(std::lround(0.75 * grid.n_steps)); }

/// Tail summary from the columns of `kappa` whose grid steps are listed in `steps`.
inline TailSummary tail_summary(const Mat& kappa, const std::vector<int>& steps, const PathGrid& grid) {
  if (kappa.cols() != static_cast<Eigen::Index>(steps.size()) || steps.empty()) {
    throw Error(ErrorCode::ShapeMismatch, "one step index per stored column");
  }
  const int k0 = tail_start_step(grid);
  TailSummary s;
  s.terminal = kappa.col(kappa.cols() - 1);
  s.tail_min = s.tail_max = s.terminal;
  for (std::size_t j = 0; j < steps.size(); ++j) {
    if (steps[j] < k0) continue;
    const auto col = kappa.col(static_cast<Eigen::Index>(j));
    s.tail_min = s.tail_min.cwiseMin(col);
    s.tail_max = s.tail_max.cwiseMax(col);
  }
  return s;
}

inline TailSummary tail_summary(const Mat& kappa_full, const PathGrid& grid) {
  std::vector<int> steps(static_cast<std::size_t>(kappa_full.cols()));
  std::iota(steps.begin(), steps.end(), 0);
  return tail_summary(kappa_full, steps, grid);
}

enum class LimitClass { Atom, Interior, Oscillating, Indeterminate };

inline std::string to_string(LimitClass c) {
  switch (c) {
    case LimitClass::Atom: return "atom";
    case LimitClass::Interior: return "interior";
    case LimitClass::Oscillating: return "oscillating";
    case LimitClass::Indeterminate: return "indeterminate";
  }
  return "?";
}

struct LimitEstimate {
  LimitClass cls = LimitClass::Indeterminate;
  int atom = -1;  // company holding all capital, for atoms
  Vec terminal;

  std::string label() const { return cls == LimitClass::Atom ? "atom_" + std::to_string(atom) : to_string(cls); }
};

inline LimitEstimate classify_limit(const TailSummary& s, double atom_eps = 0.01) {
  LimitEstimate e;
  e.terminal = s.terminal;
  const double range = s.max_range();
  Eigen::Index top = 0;
  const double biggest = s.terminal.maxCoeff(&top);
  if (range > 0.5) {
    e.cls = LimitClass::Oscillating;
  } else if (range < atom_eps) {
    if (biggest > 1.0 - atom_eps) {
      e.cls = LimitClass::Atom;
      e.atom = static_cast<int>(top);
    } else {
      e.cls = LimitClass::Interior;
    }
  }
  return e;
}

struct LimitingDistribution {
  std::vector<LimitEstimate> paths;
  std::vector<int> atom_counts;  // per company
  int interior = 0;
  int oscillating = 0;
  int indeterminate = 0;

  double fraction(int count) const { return paths.empty() ? 0.0 : static_cast<double>(count) / paths.size(); }
};

/// Histogram of limiting-capital classes. Throws HorizonTooShort when more
/// than half the paths have not settled.
inline LimitingDistribution limiting_distribution(const std::vector<TailSummary>& tails, double atom_eps = 0.01) {
  if (tails.empty()) throw Error(ErrorCode::ShapeMismatch, "no paths");
  LimitingDistribution out;
  out.atom_counts.assign(static_cast<std::size_t>(tails.front().terminal.size()), 0);
  for (const auto& t : tails) {
    LimitEstimate e = classify_limit(t, atom_eps);
    switch (e.cls) {
      case LimitClass::Atom: ++out.atom_counts[static_cast<std::size_t>(e.atom)]; break;
      case LimitClass::Interior: ++out.interior; break;
      case LimitClass::Oscillating: ++out.oscillating; break;
      case LimitClass::Indeterminate: ++out.indeterminate; break;
    }
    out.paths.push_back(std::move(e));
  }
  if (2 * out.indeterminate > static_cast<int>(tails.size())) {
    throw Error(ErrorCode::HorizonTooShort, std::to_string(out.indeterminate) + " of " +
                                               std::to_string(tails.size()) + " paths have not settled");
  }
  return out;
}

/// Uses the stored columns only; simulate with stride 1 for the exact tail range.
inline LimitingDistribution limiting_distribution(const PathSet& set, double atom_eps = 0.01) {
  std::vector<TailSummary> tails;
  tails.reserve(set.kappa.size());
  for (const auto& k : set.kappa) tails.push_back(tail_summary(k, set.stored_steps, set.grid));
  return limiting_distribution(tails, atom_eps);
}

struct LlnResult {
  double ratio = 0.0;
  bool informative = false;  // B_T > 100
  bool converged = false;    // informative and |ratio| < 0.05
};

/// Tail ratio X_T / B_T for a nondecreasing B.
inline LlnResult lln_diagnostic(const Vec& x, const Vec& b) {
  if (x.size() != b.size() || x.size() == 0) throw Error(ErrorCode::ShapeMismatch, "X and B must share the grid");
  const double bt = b(b.size() - 1);
  LlnResult res;
  res.ratio = bt > 0.0 ? x(x.size() - 1) / bt : 0.0;
  res.informative = bt > 100.0;
  res.converged = res.informative && std::abs(res.ratio) < 0.05;
  return res;
}

/// LLN check on the martingale part of log(V^kappa / V^rho):
/// X = int <kappa - rho, sigma dW>, B = int |sigma'(kappa - rho)|^2 dt.
inline LlnResult relative_wealth_lln(const PathView& path) {
  detail::check_path(path);
  detail::check_increments(path);
  CoefficientEvaluator eval(path.params, {.sigma = true, .rho = true});
  double x = 0.0;
  double b = 0.0;
  Vec diff(path.params.d);
  Vec v(path.params.d);
  for (int k = 0; k < path.grid.n_steps; ++k) {
    const auto kappa = path.kappa.col(k);
    const auto& co = eval.at(path.grid.time(k), kappa);
    diff = kappa - co.rho;
    v.noalias() = co.sigma.transpose() * diff;
    x += v.dot(path.dW.col(k));
    b += v.squaredNorm() * path.grid.dt;
  }
  return lln_diagnostic(Vec::Constant(1, x), Vec::Constant(1, b));
}

/// int <1, c^{-1} 1> |r_bank - r|^2 dt with r the implied rate. Finite exactly
/// when introducing the bank keeps a balanced market balanced.
inline double bank_rate_gap(const PathView& path, const ScalarSpec& r_bank) {
  detail::check_path(path);
  CoefficientEvaluator eval(path.params, {});
  double total = 0.0;
  for (int k = 0; k < path.grid.n_steps; ++k) {
    const double t = path.grid.time(k);
    const Vec kappa = path.kappa.col(k);
    const auto& co = eval.at(t, kappa);
    const double r = implied_interest_rate(co.a, co.c);
    const Vec ones = Vec::Ones(co.c.rows());
    const double weight = ones.dot(co.c.llt().solve(ones));
    const double gap = r_bank(t, kappa) - r;
    total += weight * gap * gap * path.grid.dt;
  }
  return total;
}

}  // namespace balmkt
