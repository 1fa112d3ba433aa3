#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "balmkt/errors.hpp"
#include "balmkt/linalg.hpp"
#include "balmkt/market_model.hpp"
#include "balmkt/parallel.hpp"
#include "balmkt/process_spec.hpp"
#include "balmkt/rng.hpp"

namespace balmkt {

/// Floor applied when a positive relative capitalization underflows.
inline constexpr double kKappaFloor = 1e-300;
/// |log S| beyond this is reported as overflow.
inline constexpr double kLogOverflow = 700.0;

struct PathStats {
  double max_sum_defect = 0.0;  // max |sum(kappa) - 1| before renormalization
  double max_sum_error = 0.0;   // max |sum(kappa) - 1| of stored states
  double min_entry = 1.0;       // smallest kappa entry seen
  long clamp_events = 0;        // positive entries floored at kKappaFloor

  void merge(const PathStats& other) {
    max_sum_defect = std::max(max_sum_defect, other.max_sum_defect);
    max_sum_error = std::max(max_sum_error, other.max_sum_error);
    min_entry = std::min(min_entry, other.min_entry);
    clamp_events += other.clamp_events;
  }
};

/// One path at full resolution: columns are grid steps.
struct SimulatedPath {
  Mat kappa;  // d x (n_steps + 1)
  Mat caps;   // d x (n_steps + 1), empty unless capitalizations were built
  Mat dW;     // d x n_steps Brownian increments
  PathStats stats;
};

struct SimulationOptions {
  int stride = 1;                // store every stride-th step (the last step is always stored)
  bool keep_increments = true;   // retain dW per path (needed for lifting and wealth diagnostics)
  int threads = default_thread_count();
};

/// Ensemble of paths sharing a grid and a seed.
struct PathSet {
  PathGrid grid;
  int n_paths = 0;
  std::uint64_t seed = 0;
  int d = 0;
  std::vector<int> stored_steps;  // grid step index of each stored column
  std::vector<Mat> kappa;         // per path: d x stored_steps.size()
  std::vector<Mat> caps;          // per path, empty when absent
  std::vector<Mat> dW;            // per path: d x n_steps, empty when not kept
  std::vector<PathStats> stats;

  bool has_caps() const { return !caps.empty() && caps.front().size() > 0; }
  bool full_resolution() const { return static_cast<int>(stored_steps.size()) == grid.n_steps + 1; }

  PathStats aggregate_stats() const {
    PathStats all;
    for (const auto& s : stats) all.merge(s);
    return all;
  }

  /// Stored column for grid step `step`, or nullopt when it was not stored.
  std::optional<int> column_of(int step) const {
    const auto it = std::lower_bound(stored_steps.begin(), stored_steps.end(), step);
    if (it == stored_steps.end() || *it != step) return std::nullopt;
    return static_cast<int>(it - stored_steps.begin());
  }
};

inline std::vector<int> stored_step_indices(const PathGrid& grid, int stride) {
  stride = std::max(stride, 1);
  std::vector<int> steps;
  for (int k = 0; k <= grid.n_steps; k += stride) steps.push_back(k);
  if (steps.back() != grid.n_steps) steps.push_back(grid.n_steps);
  return steps;
}

/// kappa^i = S^i / sum_j S^j, column by column. Zero entries are allowed as
/// long as every column has positive total capital.
inline Mat relative_caps_from_caps(const Mat& caps) {
  if (!caps.allFinite()) throw Error(ErrorCode::NonFiniteValue, "capitalizations must be finite");
  if (caps.size() > 0 && caps.minCoeff() < 0.0) {
    throw Error(ErrorCode::NonPositiveInitialCap, "capitalizations must be nonnegative");
  }
  Mat kappa(caps.rows(), caps.cols());
  for (Eigen::Index k = 0; k < caps.cols(); ++k) {
    const double total = caps.col(k).sum();
    if (!(total > 0.0)) throw Error(ErrorCode::ZeroTotalCapital, "column " + std::to_string(k) + " has no capital");
    kappa.col(k) = caps.col(k) / total;
  }
  return kappa;
}

namespace detail {

// Caches sigma = psd_factor(c) when c does not depend on (t, kappa).
class DiffusionFactor {
 public:
  explicit DiffusionFactor(const MatrixSpec& c) : spec_(c) {
    if (c.is_constant()) {
      c_ = c.constant_value();
      sigma_ = psd_factor(c_);
      zero_ = max_abs(c_) == 0.0;
      cached_ = true;
    }
  }

  void update(double t, const Vec& kappa) {
    if (cached_) return;
    c_ = eval_spec(spec_, t, kappa);
    sigma_ = psd_factor(c_);
    zero_ = max_abs(c_) == 0.0;
  }

  const Mat& c() const { return c_; }
  const Mat& sigma() const { return sigma_; }
  bool zero() const { return zero_; }

 private:
  const MatrixSpec& spec_;
  Mat c_;
  Mat sigma_;
  bool zero_ = false;
  bool cached_ = false;
};

// Gaussian increment dW ~ N(0, dt I) for one step. Skipped draws stay zero;
// the counter-based stream makes skipping free of side effects.
inline void brownian_increment(const PathRng& rng, int step, double dt, Vec& dw) {
  rng.normals(static_cast<std::uint64_t>(step), static_cast<std::size_t>(dw.size()), dw.data());
  dw *= std::sqrt(dt);
}

inline void renormalize(Vec& kappa, PathStats& stats) {
  const double total = kappa.sum();
  stats.max_sum_defect = std::max(stats.max_sum_defect, std::abs(total - 1.0));
  kappa /= total;
}

inline void record_state(const Vec& kappa, PathStats& stats) {
  stats.max_sum_error = std::max(stats.max_sum_error, std::abs(kappa.sum() - 1.0));
  stats.min_entry = std::min(stats.min_entry, kappa.minCoeff());
}

}  // namespace detail

/// One step of the balanced relative-capitalization dynamics
/// d kappa^i = kappa^i <e_i - kappa, sigma dW>, in log coordinates per company.
/// `y` must hold sigma * dW. Entries below the floor are clamped and counted;
/// exact zeros stay at zero.
inline void balanced_log_step(Vec& kappa, const Mat& c, const Vec& y, double dt, PathStats& stats) {
  const double ky = kappa.dot(y);
  const Vec ck = c * kappa;
  const double kck = kappa.dot(ck);
  for (Eigen::Index i = 0; i < kappa.size(); ++i) {
    if (kappa(i) == 0.0) continue;
    const double log_factor = (y(i) - ky) - 0.5 * (c(i, i) - 2.0 * ck(i) + kck) * dt;
    if (std::abs(log_factor) > kLogOverflow) throw Error(ErrorCode::NumericalOverflow, "log-step beyond range");
    kappa(i) *= std::exp(log_factor);
    if (kappa(i) < kKappaFloor) {
      kappa(i) = kKappaFloor;
      ++stats.clamp_events;
    }
  }
  detail::renormalize(kappa, stats);
}

/// Single path of the balanced system started at kappa0.
inline SimulatedPath simulate_balanced_path(const MatrixSpec& c_spec, const Vec& kappa0, const PathGrid& grid,
                                            std::uint64_t seed, std::uint64_t path) {
  const Eigen::Index d = kappa0.size();
  SimulatedPath out;
  out.kappa.resize(d, grid.n_steps + 1);
  out.dW = Mat::Zero(d, grid.n_steps);
  const PathRng rng(seed, Stream::Brownian, path);
  detail::DiffusionFactor diffusion(c_spec);
  Vec kappa = kappa0;
  Vec dw(d);
  out.kappa.col(0) = kappa;
  detail::record_state(kappa, out.stats);
  for (int k = 0; k < grid.n_steps; ++k) {
    diffusion.update(grid.time(k), kappa);
    if (!diffusion.zero() && d > 1) {
      detail::brownian_increment(rng, k, grid.dt, dw);
      out.dW.col(k) = dw;
      const Vec y = diffusion.sigma() * dw;
      balanced_log_step(kappa, diffusion.c(), y, grid.dt, out.stats);
    }
    out.kappa.col(k + 1) = kappa;
    detail::record_state(kappa, out.stats);
  }
  return out;
}

/// Single path of dS^i = S^i (a^i dt + (sigma dW)^i) by log-Euler.
inline SimulatedPath simulate_caps_path(const MarketParams& params, const PathGrid& grid, std::uint64_t seed,
                                        std::uint64_t path) {
  const Eigen::Index d = params.d;
  SimulatedPath out;
  out.kappa.resize(d, grid.n_steps + 1);
  out.caps.resize(d, grid.n_steps + 1);
  out.dW = Mat::Zero(d, grid.n_steps);
  const PathRng rng(seed, Stream::Brownian, path);
  detail::DiffusionFactor diffusion(params.c);
  const bool a_constant = params.a.is_constant();
  Vec a = a_constant ? params.a.constant_value() : Vec();
  Vec log_s = params.s0.array().log().matrix();
  Vec kappa = params.s0 / params.s0.sum();
  Vec dw = Vec::Zero(d);
  Vec shifted(d);
  out.caps.col(0) = params.s0;
  out.kappa.col(0) = kappa;
  detail::record_state(kappa, out.stats);
  for (int k = 0; k < grid.n_steps; ++k) {
    const double t = grid.time(k);
    diffusion.update(t, kappa);
    if (!a_constant) a = eval_spec(params.a, t, kappa);
    log_s += (a - 0.5 * diffusion.c().diagonal()) * grid.dt;
    if (!diffusion.zero()) {
      detail::brownian_increment(rng, k, grid.dt, dw);
      out.dW.col(k) = dw;
      log_s.noalias() += diffusion.sigma() * dw;
    }
    if (log_s.cwiseAbs().maxCoeff() > kLogOverflow) {
      throw Error(ErrorCode::NumericalOverflow, "|log S| exceeded 700 at step " + std::to_string(k + 1));
    }
    out.caps.col(k + 1) = log_s.array().exp().matrix();
    // Shifted exponentials keep kappa accurate when one company dominates.
    shifted = (log_s.array() - log_s.maxCoeff()).exp().matrix();
    kappa = shifted / shifted.sum();
    out.kappa.col(k + 1) = kappa;
    detail::record_state(kappa, out.stats);
  }
  return out;
}

/// Rebuilds S from a balanced kappa path: d<S,1>/<S,1> = (r + <kappa, c kappa>) dt + <kappa, sigma dW>,
/// i.e. a = c kappa + r 1, and S^i = kappa^i <S,1>.
inline void lift_path(SimulatedPath& path, const MatrixSpec& c_spec, const ScalarSpec& r_spec, const Vec& s0,
                      const PathGrid& grid) {
  const Eigen::Index d = path.kappa.rows();
  if (s0.size() != d) throw Error(ErrorCode::DimensionMismatch, "s0 has wrong length");
  if ((s0.array() <= 0.0).any()) throw Error(ErrorCode::NonPositiveInitialCap, "s0 must be positive");
  if ((s0 / s0.sum() - path.kappa.col(0)).cwiseAbs().maxCoeff() > 1e-9) {
    throw Error(ErrorCode::InconsistentInitialState, "s0 / <s0,1> differs from kappa0");
  }
  detail::DiffusionFactor diffusion(c_spec);
  path.caps.resize(d, grid.n_steps + 1);
  double log_total = std::log(s0.sum());
  path.caps.col(0) = path.kappa.col(0) * s0.sum();
  for (int k = 0; k < grid.n_steps; ++k) {
    const double t = grid.time(k);
    const Vec kappa = path.kappa.col(k);
    diffusion.update(t, kappa);
    const double r = r_spec(t, kappa);
    log_total += (r + 0.5 * kappa.dot(diffusion.c() * kappa)) * grid.dt;
    if (!diffusion.zero()) log_total += kappa.dot(diffusion.sigma() * path.dW.col(k));
    if (std::abs(log_total) > kLogOverflow) throw Error(ErrorCode::NumericalOverflow, "total capital overflow");
    path.caps.col(k + 1) = path.kappa.col(k + 1) * std::exp(log_total);
  }
}

namespace detail {

inline Mat select_columns(const Mat& full, const std::vector<int>& steps) {
  Mat out(full.rows(), static_cast<Eigen::Index>(steps.size()));
  for (std::size_t j = 0; j < steps.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = full.col(steps[j]);
  return out;
}

template <class Simulate>
PathSet simulate_ensemble(int d, const PathGrid& grid, int n_paths, std::uint64_t seed,
                          const SimulationOptions& options, Simulate&& simulate) {
  grid.validate();
  if (n_paths < 1) throw Error(ErrorCode::ShapeMismatch, "n_paths must be >= 1");
  PathSet set;
  set.grid = grid;
  set.n_paths = n_paths;
  set.seed = seed;
  set.d = d;
  set.stored_steps = stored_step_indices(grid, options.stride);
  struct Stored {
    Mat kappa, caps, dW;
    PathStats stats;
  };
  auto results = map_indices(static_cast<std::size_t>(n_paths), options.threads, [&](std::size_t p) {
    SimulatedPath path = simulate(static_cast<std::uint64_t>(p));
    Stored s;
    s.kappa = select_columns(path.kappa, set.stored_steps);
    if (path.caps.size() > 0) s.caps = select_columns(path.caps, set.stored_steps);
    if (options.keep_increments) s.dW = std::move(path.dW);
    s.stats = path.stats;
    return s;
  });
  for (auto& r : results) {
    set.kappa.push_back(std::move(r.kappa));
    if (r.caps.size() > 0) set.caps.push_back(std::move(r.caps));
    if (options.keep_increments) set.dW.push_back(std::move(r.dW));
    set.stats.push_back(r.stats);
  }
  return set;
}

}  // namespace detail

/// Monte Carlo ensemble of the capitalization SDE. Path p uses the Brownian
/// substream (seed, p), so results are independent of the worker count.
inline PathSet simulate_capitalizations(const MarketParams& params, const PathGrid& grid, int n_paths,
                                        std::uint64_t seed, const SimulationOptions& options = {}) {
  validate_params(params);
  return detail::simulate_ensemble(params.d, grid, n_paths, seed, options,
                                   [&](std::uint64_t p) { return simulate_caps_path(params, grid, seed, p); });
}

/// Monte Carlo ensemble of the perfectly balanced relative-capitalization system.
inline PathSet simulate_relative_caps_balanced(const MatrixSpec& c_spec, const Vec& kappa0, const PathGrid& grid,
                                               int n_paths, std::uint64_t seed,
                                               const SimulationOptions& options = {}) {
  if (!is_in_simplex(kappa0, 1e-12)) throw Error(ErrorCode::ShapeMismatch, "kappa0 must lie in the closed simplex");
  return detail::simulate_ensemble(static_cast<int>(kappa0.size()), grid, n_paths, seed, options,
                                   [&](std::uint64_t p) { return simulate_balanced_path(c_spec, kappa0, grid, seed, p); });
}

/// Fills capitalizations for a full-resolution balanced ensemble.
inline PathSet lift_to_capitalizations(PathSet paths, const MatrixSpec& c_spec, const ScalarSpec& r_spec,
                                       const Vec& s0) {
  if (!paths.full_resolution() || paths.dW.size() != static_cast<std::size_t>(paths.n_paths)) {
    throw Error(ErrorCode::ShapeMismatch, "lifting needs full-resolution kappa and stored increments");
  }
  paths.caps.assign(static_cast<std::size_t>(paths.n_paths), Mat());
  for (int p = 0; p < paths.n_paths; ++p) {
    SimulatedPath path{paths.kappa[p], Mat(), paths.dW[p], {}};
    lift_path(path, c_spec, r_spec, s0, paths.grid);
    paths.caps[p] = std::move(path.caps);
  }
  return paths;
}

}  // namespace balmkt
