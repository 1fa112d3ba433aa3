#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "balmkt/balance_diag.hpp"
#include "balmkt/errors.hpp"
#include "balmkt/growth_opt.hpp"
#include "balmkt/linalg.hpp"
#include "balmkt/market_model.hpp"
#include "balmkt/parallel.hpp"
#include "balmkt/qp.hpp"
#include "balmkt/rng.hpp"
#include "balmkt/sde_engine.hpp"

namespace balmkt {

/// Relative capitalizations below this are treated as a dead company.
inline constexpr double kDeathThreshold = 1e-12;

/// Point mass of the jump intensity: jumps of size x arrive at rate `weight` per year.
struct JumpAtom {
  double weight = 0.0;
  Vec x;
};

/// Jump intensity as a finite set of atoms, allowed to depend on time, the
/// pre-jump state and the number of jumps so far. Total weight must stay below
/// lambda_max, the thinning rate.
struct JumpSpec {
  using AtomRule = std::function<void(double t, const Vec& kappa, int n_jumps, std::vector<JumpAtom>& out)>;

  double lambda_max = 0.0;
  AtomRule atoms;

  static JumpSpec none() {
    return {0.0, [](double, const Vec&, int, std::vector<JumpAtom>& out) { out.clear(); }};
  }

  /// Constant atoms, intensity sum(weights).
  static JumpSpec constant(std::vector<JumpAtom> list) {
    double total = 0.0;
    for (const auto& a : list) total += a.weight;
    return {total, [list = std::move(list)](double, const Vec&, int, std::vector<JumpAtom>& out) { out = list; }};
  }

  void evaluate(double t, const Vec& kappa, int n_jumps, std::vector<JumpAtom>& out) const {
    if (!atoms) throw Error(ErrorCode::CompensatorUnavailable, "jump spec has no atom rule");
    out.clear();
    atoms(t, kappa, n_jumps, out);
    double total = 0.0;
    for (const auto& a : out) {
      if (a.x.size() != kappa.size()) throw Error(ErrorCode::ShapeMismatch, "jump size has wrong length");
      if (!(a.weight >= 0.0) || !std::isfinite(a.weight) || !a.x.allFinite()) {
        throw Error(ErrorCode::NonFiniteValue, "jump atoms need finite nonnegative weights");
      }
      if ((a.x.array() < -1.0).any()) throw Error(ErrorCode::ShapeMismatch, "jump sizes must be >= -1");
      total += a.weight;
    }
    if (total > lambda_max * (1.0 + 1e-12)) {
      throw Error(ErrorCode::InfeasibleConstraint, "jump intensity exceeds lambda_max");
    }
  }
};

enum class DeathMode { Alive, ContinuousVanish, JumpToZero };

inline std::string to_string(DeathMode m) {
  switch (m) {
    case DeathMode::Alive: return "Alive";
    case DeathMode::ContinuousVanish: return "ContinuousVanish";
    case DeathMode::JumpToZero: return "JumpToZero";
  }
  return "?";
}

struct LifetimeRecord {
  Vec zeta;  // death time per company, +inf while alive
  std::vector<DeathMode> mode;

  explicit LifetimeRecord(Eigen::Index d = 0)
      : zeta(Vec::Constant(d, std::numeric_limits<double>::infinity())),
        mode(static_cast<std::size_t>(d), DeathMode::Alive) {}

  bool alive(Eigen::Index i) const { return mode[static_cast<std::size_t>(i)] == DeathMode::Alive; }

  void kill(Eigen::Index i, double t, DeathMode how) {
    if (!alive(i)) return;
    zeta(i) = t;
    mode[static_cast<std::size_t>(i)] = how;
  }
};

namespace detail {

inline double truncation(const Vec& x) { return x.norm() <= 1.0 ? 1.0 : 0.0; }

inline double jump_denominator(const Vec& pi, const Vec& x) {
  const double den = 1.0 + pi.dot(x);
  if (!(den > 0.0)) throw Error(ErrorCode::ZeroTotalCapital, "jump would wipe out the whole market");
  return den;
}

inline double total_weight(const std::vector<JumpAtom>& atoms) {
  double total = 0.0;
  for (const auto& a : atoms) total += a.weight;
  return total;
}

// sum_atoms w [x / (1 + <pi, x>) - x 1{|x| <= 1}]
inline Vec jump_correction(const Vec& pi, const std::vector<JumpAtom>& atoms) {
  Vec out = Vec::Zero(pi.size());
  for (const auto& a : atoms) {
    if (a.weight == 0.0) continue;
    out += a.weight * (a.x / jump_denominator(pi, a.x) - truncation(a.x) * a.x);
  }
  return out;
}

}  // namespace detail

/// Drift b that makes the market perfectly balanced at kappa_minus:
/// b = c kappa + r 1 - int [x / (1 + <kappa, x>) - x 1{|x| <= 1}] nu(dx).
/// Entries of dead companies (kappa^i = 0) are reported as 0.
inline Vec drift_from_balance_jump(const Vec& kappa, const Mat& c, const std::vector<JumpAtom>& atoms, double r) {
  if (c.rows() != kappa.size() || c.cols() != kappa.size()) throw Error(ErrorCode::ShapeMismatch, "c shape");
  Vec b = c * kappa + Vec::Constant(kappa.size(), r) - detail::jump_correction(kappa, atoms);
  for (Eigen::Index i = 0; i < b.size(); ++i)
    if (kappa(i) == 0.0) b(i) = 0.0;
  return b;
}

inline Vec drift_from_balance_jump(const Vec& kappa, const Mat& c, const JumpSpec& jumps, double r, double t = 0.0,
                                   int n_jumps = 0) {
  std::vector<JumpAtom> atoms;
  jumps.evaluate(t, kappa, n_jumps, atoms);
  return drift_from_balance_jump(kappa, c, atoms, r);
}

/// Drift of kappa^i: kappa^i (<e_i - kappa, b - c kappa> + int [<e_i - kappa, x>/(1 + <kappa, x>)
/// - <e_i - kappa, x> 1{|x| <= 1}] nu(dx)).
inline Vec relcap_drift_jump(const Vec& kappa, const Vec& b, const Mat& c, const std::vector<JumpAtom>& atoms) {
  const Vec g = b - c * kappa + detail::jump_correction(kappa, atoms);
  return kappa.cwiseProduct(g - Vec::Constant(g.size(), kappa.dot(g)));
}

/// Gradient of the jump-adjusted growth functional at rho (up to multiples of 1).
inline Vec jump_growth_gradient(const Vec& rho, const Vec& b, const Mat& c, const std::vector<JumpAtom>& atoms,
                                double r) {
  return b - Vec::Constant(b.size(), r) - c * rho + detail::jump_correction(rho, atoms);
}

/// rel(pi | rho) = <pi - rho, b - r 1> - <pi - rho, c rho>
///               + int [<pi - rho, x>/(1 + <rho, x>) - <pi - rho, x> 1{|x| <= 1}] nu(dx).
inline double rel_rate_of_return(const Vec& pi, const Vec& rho, const Vec& b, const Mat& c,
                                 const std::vector<JumpAtom>& atoms, double r) {
  if (pi.size() != rho.size() || b.size() != rho.size()) throw Error(ErrorCode::ShapeMismatch, "portfolio shapes");
  return (pi - rho).dot(jump_growth_gradient(rho, b, c, atoms, r));
}

/// r + <pi, b - r 1> - <pi, c pi>/2 + int [log(1 + <pi, x>) - <pi, x> 1{|x| <= 1}] nu(dx).
/// -inf outside {1 + <pi, x> > 0}.
inline double jump_growth_rate(const Vec& pi, const Vec& b, const Mat& c, const std::vector<JumpAtom>& atoms,
                               double r) {
  double g = growth_rate(pi, b, c, r);
  for (const auto& a : atoms) {
    if (a.weight == 0.0) continue;
    const double den = 1.0 + pi.dot(a.x);
    if (!(den > 0.0)) return -std::numeric_limits<double>::infinity();
    g += a.weight * (std::log(den) - detail::truncation(a.x) * pi.dot(a.x));
  }
  return g;
}

/// Growth-optimal portfolio over the closed simplex with jumps. Damped Newton:
/// each step maximizes the local quadratic model over the simplex with the
/// active-set QP, followed by a backtracking line search on the concave growth
/// functional. Without jumps this is the exact QP of growth_optimal_constrained.
inline GrowthSolution growth_optimal_jump(const Vec& b, const Mat& c, const std::vector<JumpAtom>& atoms, double r,
                                          const Vec& start) {
  const Eigen::Index d = b.size();
  if (detail::total_weight(atoms) == 0.0) return growth_optimal_constrained({b, c, r, ConstraintSet::simplex()});

  auto admissible = [&](const Vec& pi) {
    for (const auto& a : atoms)
      if (a.weight > 0.0 && !(1.0 + pi.dot(a.x) > 0.0)) return false;
    return true;
  };
  Vec rho = is_in_simplex(start, 1e-12) && admissible(start) ? Vec(start) : uniform_portfolio(d);
  if (!admissible(rho)) throw Error(ErrorCode::ZeroTotalCapital, "no portfolio survives every jump");

  const double scale = std::max({1.0, max_abs(c), b.cwiseAbs().maxCoeff()});
  auto vertex_gap = [&](const Vec& grad) { return (grad - Vec::Constant(d, rho.dot(grad))).maxCoeff(); };
  Vec grad = jump_growth_gradient(rho, b, c, atoms, r);
  double value = jump_growth_rate(rho, b, c, atoms, r);
  int iter = 0;
  for (; iter < 100 && vertex_gap(grad) > 1e-13 * scale; ++iter) {
    Mat h = c;
    for (const auto& a : atoms) {
      if (a.weight == 0.0) continue;
      const double den = 1.0 + rho.dot(a.x);
      h += a.weight * a.x * a.x.transpose() / (den * den);
    }
    // Steps keep the budget, so the common part <rho, grad> 1 of the gradient
    // drops out; removing it first avoids cancellation in the slope.
    const Vec reduced = grad - Vec::Constant(d, rho.dot(grad));
    ActiveSetQp qp(h, reduced + h * rho, Mat::Ones(1, d), Vec::Ones(1), Vec::Zero(d), Vec::Ones(d));
    const QpResult sub = qp.solve(rho);
    const Vec step = sub.x - rho;
    const double slope = reduced.dot(step);
    if (!(slope > 0.0)) break;
    // Close to the optimum the gain in value drops below rounding; the
    // vertex gap still decreases and decides acceptance there.
    const double flat = 1e-14 * std::max(1.0, std::abs(value));
    const double gap = vertex_gap(grad);
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60 && !accepted; ++ls, t *= 0.5) {
      const Vec trial = rho + t * step;
      const double trial_value = jump_growth_rate(trial, b, c, atoms, r);
      if (!std::isfinite(trial_value)) continue;
      const Vec trial_grad = jump_growth_gradient(trial, b, c, atoms, r);
      const bool sufficient = trial_value >= value + 1e-4 * t * slope && trial_value > value;
      const bool flat_progress = std::abs(trial_value - value) <= flat && [&] {
        const double v = (trial_grad - Vec::Constant(d, trial.dot(trial_grad))).maxCoeff();
        return v < gap;
      }();
      if (sufficient || flat_progress) {
        rho = trial;
        value = trial_value;
        grad = trial_grad;
        accepted = true;
      }
    }
    if (!accepted) break;
  }
  GrowthSolution out;
  out.rho = rho;
  out.g_star = value;
  out.kkt_residual = std::max(0.0, vertex_gap(grad));
  return out;
}

/// kappa^i <- kappa^i (1 + x^i) / (1 + <kappa, x>). Companies falling below the
/// death threshold are set to zero and recorded.
inline void apply_jump(Vec& kappa, const Vec& x, LifetimeRecord* life = nullptr, double t = 0.0) {
  const double den = detail::jump_denominator(kappa, x);
  for (Eigen::Index i = 0; i < kappa.size(); ++i) {
    if (kappa(i) == 0.0) continue;
    kappa(i) *= (1.0 + x(i)) / den;
    if (kappa(i) < kDeathThreshold) {
      kappa(i) = 0.0;
      if (life) life->kill(i, t, DeathMode::JumpToZero);
    }
  }
  kappa /= kappa.sum();
}

struct JumpPath {
  SimulatedPath path;
  LifetimeRecord life;
  std::vector<int> jump_steps;     // grid step whose end received each jump
  std::vector<double> jump_times;
  double intensity_integral = 0.0; // int lambda dt along the path

  int jumps_before(int step) const {
    return static_cast<int>(std::lower_bound(jump_steps.begin(), jump_steps.end(), step) - jump_steps.begin());
  }
};

/// One path of the perfectly balanced jump system. Between jumps the
/// continuous balanced step is followed by the compensator factor
/// (1 - dt int <e_i - kappa, x>/(1 + <kappa, x>) nu(dx)) and renormalization. Candidate jump times come from a rate-lambda_max Poisson
/// clock and are accepted with probability lambda / lambda_max; accepted jumps
/// are applied at the end of their step.
inline JumpPath simulate_jump_path(const MatrixSpec& c_spec, const JumpSpec& jumps, const Vec& kappa0,
                                   const PathGrid& grid, std::uint64_t seed, std::uint64_t path) {
  if (!jumps.atoms) throw Error(ErrorCode::CompensatorUnavailable, "jump spec has no atom rule");
  const Eigen::Index d = kappa0.size();
  JumpPath out;
  out.life = LifetimeRecord(d);
  for (Eigen::Index i = 0; i < d; ++i)
    if (kappa0(i) == 0.0) out.life.kill(i, grid.t0, DeathMode::ContinuousVanish);
  SimulatedPath& sp = out.path;
  sp.kappa.resize(d, grid.n_steps + 1);
  sp.dW = Mat::Zero(d, grid.n_steps);
  const PathRng brownian(seed, Stream::Brownian, path);
  const PathRng clock(seed, Stream::JumpClock, path);
  const PathRng mark(seed, Stream::JumpMark, path);
  detail::DiffusionFactor diffusion(c_spec);

  Vec kappa = kappa0;
  Vec dw(d);
  std::vector<JumpAtom> atoms;
  std::uint64_t candidate = 0;
  const double inf = std::numeric_limits<double>::infinity();
  double next_candidate = jumps.lambda_max > 0.0 ? grid.t0 + clock.exponential(0) / jumps.lambda_max : inf;
  int n_jumps = 0;

  sp.kappa.col(0) = kappa;
  detail::record_state(kappa, sp.stats);
  for (int k = 0; k < grid.n_steps; ++k) {
    const double t = grid.time(k);
    const double t_next = grid.time(k + 1);
    jumps.evaluate(t, kappa, n_jumps, atoms);
    const Vec kappa_left = kappa;

    diffusion.update(t, kappa);
    if (!diffusion.zero() && d > 1) {
      detail::brownian_increment(brownian, k, grid.dt, dw);
      sp.dW.col(k) = dw;
      const Vec y = diffusion.sigma() * dw;
      balanced_log_step(kappa, diffusion.c(), y, grid.dt, sp.stats);
    }

    const double lambda = detail::total_weight(atoms);
    if (lambda > 0.0) {
      out.intensity_integral += lambda * grid.dt;
      Vec comp = Vec::Zero(d);
      for (const auto& a : atoms) {
        if (a.weight == 0.0) continue;
        const double den = detail::jump_denominator(kappa_left, a.x);
        comp -= a.weight * (a.x - Vec::Constant(d, kappa_left.dot(a.x))) / den;
      }
      for (Eigen::Index i = 0; i < d; ++i) {
        if (kappa(i) == 0.0) continue;
        kappa(i) *= 1.0 + comp(i) * grid.dt;
        if (kappa(i) < kDeathThreshold) {
          kappa(i) = 0.0;
          out.life.kill(i, t_next, DeathMode::ContinuousVanish);
        }
      }
      // <kappa_left, comp> = 0; after a diffusion step the sum moves at O(dt^1.5).
      kappa /= kappa.sum();
    }

    while (next_candidate < t_next) {
      const double tau = next_candidate;
      jumps.evaluate(tau, kappa, n_jumps, atoms);
      const auto u = mark.uniform_pair(candidate, 0);
      const double total = detail::total_weight(atoms);
      if (u[0] * jumps.lambda_max < total) {
        double target = u[1] * total;
        std::size_t pick = 0;
        while (pick + 1 < atoms.size() && target >= atoms[pick].weight) target -= atoms[pick++].weight;
        apply_jump(kappa, atoms[pick].x, &out.life, t_next);
        ++n_jumps;
        out.jump_steps.push_back(k);
        out.jump_times.push_back(tau);
      }
      ++candidate;
      next_candidate += clock.exponential(candidate) / jumps.lambda_max;
    }

    sp.kappa.col(k + 1) = kappa;
    detail::record_state(kappa, sp.stats);
  }
  return out;
}

struct JumpPathSet {
  PathSet paths;
  std::vector<LifetimeRecord> lifetimes;
  std::vector<std::vector<int>> jump_steps;
  std::vector<double> intensity_integrals;
};

/// Monte Carlo ensemble of the perfectly balanced jump system.
inline JumpPathSet simulate_jump_balanced(const MatrixSpec& c_spec, const JumpSpec& jumps, const Vec& kappa0,
                                          const PathGrid& grid, int n_paths, std::uint64_t seed,
                                          const SimulationOptions& options = {}) {
  if (!is_in_simplex(kappa0, 1e-12)) throw Error(ErrorCode::ShapeMismatch, "kappa0 must lie in the closed simplex");
  if (!jumps.atoms) throw Error(ErrorCode::CompensatorUnavailable, "jump spec has no atom rule");
  grid.validate();
  if (n_paths < 1) throw Error(ErrorCode::ShapeMismatch, "n_paths must be >= 1");
  JumpPathSet set;
  PathSet& ps = set.paths;
  ps.grid = grid;
  ps.n_paths = n_paths;
  ps.seed = seed;
  ps.d = static_cast<int>(kappa0.size());
  ps.stored_steps = stored_step_indices(grid, options.stride);
  auto results = map_indices(static_cast<std::size_t>(n_paths), options.threads, [&](std::size_t p) {
    JumpPath jp = simulate_jump_path(c_spec, jumps, kappa0, grid, seed, p);
    jp.path.kappa = detail::select_columns(jp.path.kappa, ps.stored_steps);
    if (!options.keep_increments) jp.path.dW = Mat();
    return jp;
  });
  for (auto& r : results) {
    ps.kappa.push_back(std::move(r.path.kappa));
    if (options.keep_increments) ps.dW.push_back(std::move(r.path.dW));
    ps.stats.push_back(r.path.stats);
    set.lifetimes.push_back(std::move(r.life));
    set.jump_steps.push_back(std::move(r.jump_steps));
    set.intensity_integrals.push_back(r.intensity_integral);
  }
  return set;
}

/// Jump market coefficients. Without an explicit drift b the market is the
/// perfectly balanced one, with b given by drift_from_balance_jump.
struct JumpMarket {
  int d = 2;
  MatrixSpec c;
  ScalarSpec r;
  JumpSpec jumps;
  std::optional<VectorSpec> b;
};

/// A simulated jump path at full resolution with its market.
struct JumpPathView {
  const JumpMarket& market;
  const PathGrid& grid;
  const Mat& kappa;                  // d x (n_steps + 1)
  const std::vector<int>& jump_steps;

  int jumps_before(int step) const {
    return static_cast<int>(std::lower_bound(jump_steps.begin(), jump_steps.end(), step) - jump_steps.begin());
  }
};

namespace detail {

struct JumpStep {
  std::vector<JumpAtom> atoms;
  Mat c;
  Vec b;
  double r = 0.0;
  GrowthSolution opt;
};

template <class Fn>
void for_each_jump_step(const JumpPathView& view, Fn&& fn) {
  const Eigen::Index d = view.market.d;
  if (view.kappa.rows() != d || view.kappa.cols() != view.grid.n_steps + 1) {
    throw Error(ErrorCode::ShapeMismatch, "kappa path must be d x (n_steps + 1)");
  }
  JumpStep s;
  for (int k = 0; k < view.grid.n_steps; ++k) {
    const double t = view.grid.time(k);
    const Vec kappa = view.kappa.col(k);
    view.market.jumps.evaluate(t, kappa, view.jumps_before(k), s.atoms);
    s.c = eval_spec(view.market.c, t, kappa);
    s.r = view.market.r(t, kappa);
    s.b = view.market.b ? eval_spec(*view.market.b, t, kappa) : drift_from_balance_jump(kappa, s.c, s.atoms, s.r);
    s.opt = growth_optimal_jump(s.b, s.c, s.atoms, s.r, kappa);
    fn(k, kappa, s);
  }
}

inline double capped_square_log(double ratio) {
  if (!(ratio > 0.0) || !std::isfinite(ratio)) return 1.0;
  const double l = std::log(ratio);
  return std::min(1.0, l * l);
}

}  // namespace detail

/// L_t = int (-rel(kappa | rho) + c^{kappa|rho}/2) dt + int int [1 ^ |log((1 + <kappa, x>)/(1 + <rho, x>))|^2] nu(dx) dt.
inline Vec loss_of_balance_jump(const JumpPathView& view) {
  Vec l(view.grid.n_steps + 1);
  l(0) = 0.0;
  detail::for_each_jump_step(view, [&](int k, const Vec& kappa, const detail::JumpStep& s) {
    const Vec& rho = s.opt.rho;
    const Vec diff = kappa - rho;
    double rate = -rel_rate_of_return(kappa, rho, s.b, s.c, s.atoms, s.r) + 0.5 * diff.dot(s.c * diff);
    for (const auto& a : s.atoms) {
      if (a.weight == 0.0) continue;
      rate += a.weight * detail::capped_square_log((1.0 + kappa.dot(a.x)) / (1.0 + rho.dot(a.x)));
    }
    l(k + 1) = l(k) + detail::clip_increment(rate) * view.grid.dt;
  });
  return l;
}

/// Cumulative distance int (|rel(e_i|rho) - rel(e_j|rho)| + c^{i|j}/2) dt
/// + int int [1 ^ |log((1 + x^i)/(1 + x^j))|^2] nu(dx) dt on the grid.
inline Vec pairwise_distance_jump_path(const JumpPathView& view, int i, int j) {
  const int d = view.market.d;
  if (i < 0 || j < 0 || i >= d || j >= d || i == j) throw Error(ErrorCode::ShapeMismatch, "invalid company pair");
  Vec dist(view.grid.n_steps + 1);
  dist(0) = 0.0;
  detail::for_each_jump_step(view, [&](int k, const Vec&, const detail::JumpStep& s) {
    const Vec grad = jump_growth_gradient(s.opt.rho, s.b, s.c, s.atoms, s.r);
    // rel(e_i | rho) - rel(e_j | rho) = grad_i - grad_j.
    double rate = std::abs(grad(i) - grad(j)) + 0.5 * (s.c(i, i) + s.c(j, j) - 2.0 * s.c(i, j));
    for (const auto& a : s.atoms) {
      if (a.weight == 0.0) continue;
      rate += a.weight * detail::capped_square_log((1.0 + a.x(i)) / (1.0 + a.x(j)));
    }
    dist(k + 1) = dist(k) + rate * view.grid.dt;
  });
  return dist;
}

inline double pairwise_distance_jump(const JumpPathView& view, int i, int j) {
  return pairwise_distance_jump_path(view, i, j)(view.grid.n_steps);
}

/// Realized jump count over its compensator; tends to 1 as the compensator grows.
inline double jump_count_ratio(int n_jumps, double intensity_integral) {
  return intensity_integral > 0.0 ? n_jumps / intensity_integral : std::numeric_limits<double>::quiet_NaN();
}

// Two companies, no continuous noise, at most one jump of size (0, l(t)) with
// l(t) = 1 / (1 - e^{t/2}/2) before 2 log 2; company 1 then vanishes continuously.
namespace death_example {

inline const double kDeathTime = 2.0 * std::numbers::ln2;

inline double jump_size(double t) { return t < kDeathTime ? 1.0 / (1.0 - 0.5 * std::exp(0.5 * t)) : 0.0; }

/// kappa^1 before the jump.
inline double kappa1(double t) { return t < kDeathTime ? 1.0 - 0.5 * std::exp(0.5 * t) : 0.0; }

inline JumpSpec jumps() {
  return {1.0, [](double t, const Vec&, int n_jumps, std::vector<JumpAtom>& out) {
            out.clear();
            if (n_jumps > 0 || t >= kDeathTime) return;
            Vec x(2);
            x << 0.0, jump_size(t);
            out.push_back({1.0, x});
          }};
}

inline JumpMarket market() {
  return {2, MatrixSpec::constant(Mat::Zero(2, 2)), ScalarSpec::constant(0.0), jumps(), std::nullopt};
}

inline Vec kappa0() { return Vec::Constant(2, 0.5); }

}  // namespace death_example

struct DeathPathSummary {
  double jump_time = std::numeric_limits<double>::infinity();
  double sup_error = 0.0;  // pre-jump |kappa^1 - analytic| before 2 log 2
  double zeta = std::numeric_limits<double>::infinity();
  DeathMode mode = DeathMode::Alive;
};

struct DeathExampleReport {
  PathGrid grid;
  int n_paths = 0;
  double sup_error = 0.0;
  int dying = 0;
  double dying_fraction = 0.0;
  double dying_se = 0.0;
  double max_death_time_error = 0.0;  // over paths without a jump before 2 log 2
  bool all_continuous_vanish = true;
  std::vector<DeathPathSummary> paths;
  std::vector<JumpPath> kept;  // first few full paths, for output

  bool analytic_match(double tol_factor = 5.0) const {
    const double tol = tol_factor * grid.dt;
    return sup_error <= tol && max_death_time_error <= tol && all_continuous_vanish;
  }
};

/// Per-path comparison with the closed form.
inline DeathPathSummary summarize_death_path(const JumpPath& jp, const PathGrid& grid) {
  DeathPathSummary s;
  const int jump_step = jp.jump_steps.empty() ? grid.n_steps : jp.jump_steps.front();
  if (!jp.jump_times.empty()) s.jump_time = jp.jump_times.front();
  for (int k = 0; k <= jump_step; ++k) {
    const double t = grid.time(k);
    if (t >= death_example::kDeathTime) break;
    s.sup_error = std::max(s.sup_error, std::abs(jp.path.kappa(1, k) - death_example::kappa1(t)));
  }
  s.zeta = jp.life.zeta(1);
  s.mode = jp.life.mode[1];
  return s;
}

/// Folds per-path summaries (in path order) into the report.
inline DeathExampleReport death_example_report(const PathGrid& grid, std::vector<DeathPathSummary> paths) {
  DeathExampleReport rep;
  rep.grid = grid;
  rep.n_paths = static_cast<int>(paths.size());
  if (paths.empty()) throw Error(ErrorCode::ShapeMismatch, "no paths");
  for (const auto& s : paths) {
    rep.sup_error = std::max(rep.sup_error, s.sup_error);
    if (s.mode != DeathMode::Alive) ++rep.dying;
    if (s.jump_time >= death_example::kDeathTime) {
      rep.max_death_time_error = std::max(rep.max_death_time_error, std::abs(s.zeta - death_example::kDeathTime));
      if (s.mode != DeathMode::ContinuousVanish) rep.all_continuous_vanish = false;
    }
  }
  rep.dying_fraction = static_cast<double>(rep.dying) / rep.n_paths;
  rep.dying_se = std::sqrt(0.25 * 0.75 / rep.n_paths);
  rep.paths = std::move(paths);
  return rep;
}

inline void check_death_grid(const PathGrid& grid) {
  grid.validate();
  if (grid.horizon() <= death_example::kDeathTime) {
    throw Error(ErrorCode::HorizonTooShort, "horizon must exceed 2 log 2");
  }
}

/// Simulates the two-company death example and compares it with the closed form.
/// The grid must reach past 2 log 2; dt <= 1e-3 is the intended resolution.
inline DeathExampleReport example_death_of_company(const PathGrid& grid, int n_paths, std::uint64_t seed,
                                                   int threads = default_thread_count(), int keep_paths = 0) {
  check_death_grid(grid);
  const MatrixSpec c = MatrixSpec::constant(Mat::Zero(2, 2));
  const JumpSpec jumps = death_example::jumps();
  struct Result {
    DeathPathSummary summary;
    std::optional<JumpPath> full;
  };
  auto results = map_indices(static_cast<std::size_t>(n_paths), threads, [&](std::size_t p) {
    JumpPath jp = simulate_jump_path(c, jumps, death_example::kappa0(), grid, seed, p);
    Result r;
    r.summary = summarize_death_path(jp, grid);
    if (static_cast<int>(p) < keep_paths) r.full = std::move(jp);
    return r;
  });
  std::vector<DeathPathSummary> summaries;
  std::vector<JumpPath> kept;
  for (auto& r : results) {
    summaries.push_back(r.summary);
    if (r.full) kept.push_back(std::move(*r.full));
  }
  DeathExampleReport rep = death_example_report(grid, std::move(summaries));
  rep.kept = std::move(kept);
  return rep;
}

}  // namespace balmkt
