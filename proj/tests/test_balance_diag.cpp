#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "balmkt/balance_diag.hpp"
#include "support.hpp"

using namespace balmkt;
using namespace balmkt::testing;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::VersionMismatch;
}

Mat random_psd(std::mt19937_64& gen, int d) {
  std::normal_distribution<double> n01;
  Mat a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = n01(gen);
  return 0.3 * a.transpose() * a / d;
}

// Two companies, company 0 riskless with zero return, company 1 with volatility sigma and return abar.
MarketParams two_company(double abar, double sigma) {
  Mat c = Mat::Zero(2, 2);
  c(1, 1) = sigma * sigma;
  return constant_market(vec({0.0, abar}), c, 0.0, vec({1.0, 1.0}));
}

struct Lifted {
  MarketParams params;
  PathGrid grid;
  SimulatedPath path;
  PathView view() const { return {params, grid, path.kappa, path.dW}; }
};

Lifted lifted_balanced(const Mat& c, double r, const Vec& s0, const PathGrid& grid, std::uint64_t seed,
                       std::uint64_t p) {
  const auto c_spec = MatrixSpec::constant(c);
  const auto r_spec = ScalarSpec::constant(r);
  Lifted out{balanced_market(c_spec, r_spec, s0), grid, {}};
  out.path = simulate_balanced_path(c_spec, s0 / s0.sum(), grid, seed, p);
  lift_path(out.path, c_spec, r_spec, s0, grid);
  return out;
}

}  // namespace

TEST(RelcapDrift, VanishesExactlyUnderBalance) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 2 + trial % 4;
    const Mat c = random_psd(gen, d);
    Vec kappa = Vec::Random(d).cwiseAbs() + Vec::Constant(d, 0.01);
    kappa /= kappa.sum();
    const Vec a = c * kappa + Vec::Constant(d, 0.02);
    EXPECT_LE(relcap_drift(kappa, a, c).cwiseAbs().maxCoeff(), 1e-15);
    const Vec tilted = a + 0.1 * unit_vector(d, 0);
    const Vec drift = relcap_drift(kappa, tilted, c);
    EXPECT_NEAR(drift.sum(), 0.0, 1e-15);
    EXPECT_NEAR(drift(0), kappa(0) * (1.0 - kappa(0)) * 0.1, 1e-15);
  }
}

TEST(LossOfBalance, PerfectlyBalancedIsZero) {
  std::mt19937_64 gen(17);
  const PathGrid grid{0.0, 1e-3, 1000};
  for (int d : {2, 3, 5}) {
    const Lifted l = lifted_balanced(random_psd(gen, d), 0.01, Vec::LinSpaced(d, 1.0, 2.0), grid, 3, 0);
    const Vec big_l = loss_of_balance(l.view());
    EXPECT_LE(big_l(grid.n_steps), 1e-9);
  }
}

TEST(LossOfBalance, TwoCompanyIncrements) {
  const PathGrid grid{0.0, 1e-2, 2000};
  {
    const auto params = two_company(0.0, 1.0);
    const auto path = simulate_caps_path(params, grid, 11, 0);
    const Vec rate = balance_increments({params, grid, path.kappa, path.dW});
    for (int k = 0; k < grid.n_steps; ++k) {
      const double k1 = path.kappa(1, k);
      ASSERT_NEAR(rate(k) * grid.dt, 0.5 * k1 * k1 * grid.dt, 1e-10);
    }
  }
  {
    const auto params = two_company(0.5, 1.0);
    const auto path = simulate_caps_path(params, grid, 11, 1);
    const Vec rate = balance_increments({params, grid, path.kappa, path.dW});
    for (int k = 0; k < grid.n_steps; ++k) {
      const double k1 = path.kappa(1, k) - 0.5;
      ASSERT_NEAR(rate(k) * grid.dt, 0.5 * k1 * k1 * grid.dt, 1e-10);
    }
  }
}

TEST(LossOfBalance, NondecreasingFromZero) {
  std::mt19937_64 gen(23);
  const PathGrid grid{0.0, 1e-2, 500};
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 2 + trial % 3;
    Vec a = Vec::Random(d) * 0.3;
    auto params = constant_market(a, random_psd(gen, d), 0.01, Vec::Ones(d));
    // State-dependent drift so rho moves along the path.
    params.a = VectorSpec::state_function([a](double, const Vec& kappa) -> Vec { return a + 0.2 * kappa; });
    const auto path = simulate_caps_path(params, grid, 29, static_cast<std::uint64_t>(trial));
    const Vec big_l = loss_of_balance({params, grid, path.kappa, path.dW});
    EXPECT_EQ(big_l(0), 0.0);
    for (int k = 0; k < grid.n_steps; ++k) ASSERT_GE(big_l(k + 1), big_l(k));
  }
}

TEST(ClassifyOutcome, Examples) {
  const PathGrid grid{0.0, 1e-2, 1000};
  Vec zero = Vec::Zero(grid.n_steps + 1);
  Vec linear(grid.n_steps + 1), saturating(grid.n_steps + 1);
  for (int k = 0; k <= grid.n_steps; ++k) {
    linear(k) = 0.25 * grid.time(k);
    saturating(k) = 1.0 - std::exp(-grid.time(k));
  }
  EXPECT_EQ(classify_outcome(zero, grid).classification, Outcome::Balanced);
  const auto lin = classify_outcome(linear, grid);
  EXPECT_EQ(lin.classification, Outcome::Unbalanced);
  EXPECT_NEAR(lin.slope_tail, 0.25, 1e-12);
  EXPECT_NEAR(lin.l_terminal, 2.5, 1e-12);
  EXPECT_EQ(classify_outcome(saturating, grid).classification, Outcome::Balanced);
  // Bounded slope but L above the cap.
  EXPECT_EQ(classify_outcome(Vec::Constant(grid.n_steps + 1, 60.0), grid).classification, Outcome::Indeterminate);
  Vec mid(grid.n_steps + 1);
  for (int k = 0; k <= grid.n_steps; ++k) mid(k) = 5e-3 * grid.time(k);
  EXPECT_EQ(classify_outcome(mid, grid).classification, Outcome::Indeterminate);
}

TEST(WealthPath, MarketPortfolioOwnsTheMarket) {
  std::mt19937_64 gen(41);
  const PathGrid grid{0.0, 1e-3, 1000};
  const Vec s0 = vec({1.0, 2.0, 3.0});
  const Lifted l = lifted_balanced(random_psd(gen, 3), 0.03, s0, grid, 8, 2);
  const Vec v = wealth_path(market_portfolio(), l.view());
  for (int k = 0; k <= grid.n_steps; k += 50) {
    const double total = l.path.caps.col(k).sum() / s0.sum();
    ASSERT_NEAR(v(k) / total, 1.0, 1e-6);
  }
}

TEST(WealthPath, BankAndSingleStock) {
  const PathGrid grid{0.0, 1e-3, 1000};
  Mat c(2, 2);
  c << 0.09, 0.02, 0.02, 0.16;
  auto params = constant_market(vec({0.05, 0.1}), c, 0.0, vec({1.0, 4.0}));
  params.r = ScalarSpec::time_table({0.0, 1.0}, {0.01, 0.05});
  const auto path = simulate_caps_path(params, grid, 4, 0);
  const PathView view{params, grid, path.kappa, path.dW};
  const Vec bank = wealth_path(VectorSpec::constant(Vec::Zero(2)), view);
  // Left-point rule for r(t) = 0.01 + 0.04 t.
  EXPECT_NEAR(std::log(bank(grid.n_steps)), 0.01 + 0.02 - 0.02 * grid.dt, 1e-12);
  for (int i = 0; i < 2; ++i) {
    const Vec v = wealth_path(VectorSpec::constant(unit_vector(2, i)), view);
    for (int k = 0; k <= grid.n_steps; k += 100) ASSERT_NEAR(v(k) / (path.caps(i, k) / params.s0(i)), 1.0, 1e-6);
  }
  EXPECT_EQ(code_of([&] { wealth_path(VectorSpec::constant(Vec::Zero(3)), view); }), ErrorCode::ShapeMismatch);
}

TEST(RelativeWealthDecomposition, BalancedPathIsPureMartingale) {
  std::mt19937_64 gen(2);
  const PathGrid grid{0.0, 1e-3, 500};
  const Lifted l = lifted_balanced(random_psd(gen, 3), 0.0, vec({1.0, 1.0, 1.0}), grid, 1, 0);
  const auto dec = log_relative_wealth_decomposition(l.view());
  EXPECT_LE(dec.drift.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(dec.max_defect(), 1e-9);
}

TEST(RelativeWealthDecomposition, NoNoiseIsPureDrift) {
  const PathGrid grid{0.0, 1e-2, 300};
  const auto params = constant_market(vec({0.0, 0.2, 0.05}), Mat::Zero(3, 3), 0.01, vec({1.0, 1.0, 1.0}));
  const auto path = simulate_caps_path(params, grid, 1, 0);
  const PathView view{params, grid, path.kappa, path.dW};
  const auto dec = log_relative_wealth_decomposition(view);
  EXPECT_EQ(dec.martingale.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LE((dec.direct + loss_of_balance(view)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT(dec.drift.cwiseAbs().maxCoeff(), 0.0);
}

TEST(RelativeWealthDecomposition, TwoCompanyReconstruction) {
  const PathGrid grid{0.0, 1e-2, 1000};
  const auto params = two_company(0.0, 1.0);
  double worst = 0.0;
  for (std::uint64_t p = 0; p < 100; ++p) {
    const auto path = simulate_caps_path(params, grid, 77, p);
    worst = std::max(worst, log_relative_wealth_decomposition({params, grid, path.kappa, path.dW}).max_defect());
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(PairwiseDistance, Examples) {
  const PathGrid grid{0.0, 1e-2, 500};
  {
    const auto params = constant_market(vec({0.1, 0.1}), Mat::Zero(2, 2), 0.0, vec({1.0, 3.0}));
    const auto path = simulate_caps_path(params, grid, 1, 0);
    EXPECT_EQ(pairwise_distance({params, grid, path.kappa, path.dW}, 0, 1), 0.0);
  }
  const auto params = two_company(0.0, 1.0);
  const auto path = simulate_caps_path(params, grid, 1, 0);
  const PathView view{params, grid, path.kappa, path.dW};
  const Vec dist = pairwise_distance_path(view, 0, 1);
  for (int k = 0; k <= grid.n_steps; k += 50) ASSERT_NEAR(dist(k), grid.time(k), 1e-10);
  const Mat dm = distance_matrix(view);
  EXPECT_EQ(dm(0, 0), 0.0);
  EXPECT_EQ(dm(0, 1), dm(1, 0));
  EXPECT_EQ(code_of([&] { pairwise_distance(view, 1, 1); }), ErrorCode::ShapeMismatch);
}

TEST(EquivalenceClasses, Examples) {
  auto p = equivalence_classes(Mat::Zero(4, 4));
  ASSERT_EQ(p.classes.size(), 1u);
  EXPECT_EQ(p.classes[0].size(), 4u);
  EXPECT_FALSE(p.intransitive);

  Mat d = Mat::Constant(3, 3, 1e6);
  d.diagonal().setZero();
  d(0, 1) = d(1, 0) = 1.0;
  p = equivalence_classes(d, 25.0);
  ASSERT_EQ(p.classes.size(), 2u);
  EXPECT_EQ(p.classes[0], (std::vector<int>{0, 1}));
  EXPECT_EQ(p.classes[1], (std::vector<int>{2}));
  EXPECT_FALSE(p.intransitive);

  d(1, 2) = d(2, 1) = 1.0;
  p = equivalence_classes(d, 25.0);
  ASSERT_EQ(p.classes.size(), 1u);
  EXPECT_TRUE(p.intransitive);
}

TEST(LimitingDistribution, NoNoiseStaysInterior) {
  const PathGrid grid{0.0, 1e-2, 1000};
  const Vec kappa0 = vec({0.2, 0.3, 0.5});
  const auto set = simulate_relative_caps_balanced(MatrixSpec::constant(Mat::Zero(3, 3)), kappa0, grid, 20, 1,
                                                   {.stride = 10, .keep_increments = false});
  const auto dist = limiting_distribution(set);
  EXPECT_EQ(dist.interior, 20);
  for (const auto& e : dist.paths) EXPECT_LE((e.terminal - kappa0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(LimitingDistribution, OneCompanyTakesAll) {
  const PathGrid grid{0.0, 1e-2, 10000};
  const auto params = two_company(0.0, 1.0);
  std::vector<TailSummary> tails;
  int balanced = 0;
  for (std::uint64_t p = 0; p < 100; ++p) {
    const auto path = simulate_caps_path(params, grid, 5, p);
    tails.push_back(tail_summary(path.kappa, grid));
    balanced += balance_report({params, grid, path.kappa, path.dW}).classification == Outcome::Balanced;
  }
  const auto dist = limiting_distribution(tails);
  EXPECT_GE(dist.atom_counts[0], 95);
  EXPECT_GE(balanced, 95);
}

TEST(LimitingDistribution, ShortHorizonIsReported) {
  const PathGrid grid{0.0, 1e-2, 100};
  const auto set = simulate_capitalizations(two_company(0.0, 1.0), grid, 50, 3, {.stride = 1, .keep_increments = false});
  EXPECT_EQ(code_of([&] { limiting_distribution(set); }), ErrorCode::HorizonTooShort);
}

TEST(ClassifyLimit, Buckets) {
  TailSummary s{vec({0.995, 0.005}), vec({0.99, 0.004}), vec({0.996, 0.01})};
  auto e = classify_limit(s);
  EXPECT_EQ(e.cls, LimitClass::Atom);
  EXPECT_EQ(e.atom, 0);
  EXPECT_EQ(e.label(), "atom_0");
  s = {vec({0.4, 0.6}), vec({0.1, 0.05}), vec({0.95, 0.9})};
  EXPECT_EQ(classify_limit(s).cls, LimitClass::Oscillating);
  s = {vec({0.4, 0.6}), vec({0.399, 0.598}), vec({0.402, 0.601})};
  EXPECT_EQ(classify_limit(s).cls, LimitClass::Interior);
  s = {vec({0.4, 0.6}), vec({0.3, 0.5}), vec({0.5, 0.7})};
  EXPECT_EQ(classify_limit(s).cls, LimitClass::Indeterminate);
}

TEST(LlnDiagnostic, Examples) {
  const Vec t = Vec::LinSpaced(101, 0.0, 1000.0);
  auto res = lln_diagnostic(Vec::Zero(101), t);
  EXPECT_EQ(res.ratio, 0.0);
  EXPECT_TRUE(res.converged);
  res = lln_diagnostic(Vec::Constant(101, 10.0), Vec::LinSpaced(101, 0.0, 50.0));
  EXPECT_DOUBLE_EQ(res.ratio, 0.2);
  EXPECT_FALSE(res.informative);

  // W_T / T with T = 1e4, exact Gaussian increments over unit steps.
  std::vector<double> ratios;
  for (std::uint64_t p = 0; p < 200; ++p) {
    const PathRng rng(99, Stream::Auxiliary, p);
    Vec w(10001), b(10001);
    w(0) = b(0) = 0.0;
    double z[1];
    for (int k = 0; k < 10000; ++k) {
      rng.normals(static_cast<std::uint64_t>(k), 1, z);
      w(k + 1) = w(k) + z[0];
      b(k + 1) = k + 1.0;
    }
    ratios.push_back(lln_diagnostic(w, b).ratio);
  }
  const auto ms = mean_se(ratios);
  EXPECT_LE(std::abs(ms.mean), 3.0 / std::sqrt(1e4 * 200));
}

TEST(BankRateGap, ImpliedRateGivesZero) {
  Mat c(2, 2);
  c << 0.2, 0.05, 0.05, 0.1;
  const auto params = constant_market(vec({0.1, 0.3}), c, 0.0, vec({1.0, 1.0}));
  const PathGrid grid{0.0, 1e-2, 100};
  const auto path = simulate_caps_path(params, grid, 1, 0);
  const PathView view{params, grid, path.kappa, path.dW};
  const double r = implied_interest_rate(params.a.constant_value(), c);
  EXPECT_NEAR(bank_rate_gap(view, ScalarSpec::constant(r)), 0.0, 1e-20);
  const Vec ones = Vec::Ones(2);
  const double w = ones.dot(c.llt().solve(ones));
  EXPECT_NEAR(bank_rate_gap(view, ScalarSpec::constant(r + 0.1)), w * 0.01 * 1.0, 1e-12);
}

// 2 g^{rho|kappa} >= c^{rho|kappa} and |g^{i|k}| <= |g^{i|j}| + |g^{j|k}|, per state.
TEST(GrowthGaps, PropertyPerStepInequalities) {
  std::mt19937_64 gen(61);
  for (int trial = 0; trial < 2000; ++trial) {
    const int d = 2 + trial % 4;
    const Mat c = random_psd(gen, d);
    const Vec a = Vec::Random(d) * 0.4;
    const double r = 0.02;
    Vec kappa = Vec::Random(d).cwiseAbs() + Vec::Constant(d, 1e-3);
    kappa /= kappa.sum();
    const auto s = growth_optimal_constrained({a, c, r, ConstraintSet::simplex()});
    const double g_gap = s.g_star - growth_rate(kappa, a, c, r);
    const Vec diff = s.rho - kappa;
    ASSERT_GE(2.0 * g_gap, diff.dot(c * diff) - 1e-12) << "trial " << trial;
    std::vector<double> g(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) g[i] = growth_rate(unit_vector(d, i), a, c, r);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int k = 0; k < d; ++k)
          ASSERT_LE(std::abs(g[i] - g[k]), std::abs(g[i] - g[j]) + std::abs(g[j] - g[k]) + 1e-15);
  }
}

// Balanced market whose volatility dies out: distances between survivors stop growing.
TEST(PairwiseDistance, PropertyFiniteOnBalancedSurvivors) {
  const PathGrid grid{0.0, 1e-2, 2000};
  const auto c_spec = MatrixSpec::time_table({0.0, 2.0, 5.0, 20.0},
                                             {Mat::Identity(3, 3) * 0.5, Mat::Identity(3, 3) * 0.1,
                                              Mat::Identity(3, 3) * 1e-3, Mat::Zero(3, 3)});
  const auto r_spec = ScalarSpec::constant(0.0);
  const auto params = balanced_market(c_spec, r_spec, vec({1.0, 1.0, 1.0}));
  int checked = 0;
  for (std::uint64_t p = 0; p < 30; ++p) {
    const auto path = simulate_balanced_path(c_spec, uniform_portfolio(3), grid, 13, p);
    const PathView view{params, grid, path.kappa, path.dW};
    const auto rep = balance_report(view);
    ASSERT_EQ(rep.classification, Outcome::Balanced);
    const Vec terminal = path.kappa.col(grid.n_steps);
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j) {
        if (terminal(i) <= 0.1 || terminal(j) <= 0.1) continue;
        const Vec dist = pairwise_distance_path(view, i, j);
        const int k0 = tail_start_step(grid);
        const double slope = (dist(grid.n_steps) - dist(k0)) / ((grid.n_steps - k0) * grid.dt);
        EXPECT_LT(slope, 1e-3);
        ++checked;
      }
  }
  EXPECT_GT(checked, 0);
}

// V^pi / V^rho is a supermartingale: its mean does not increase across checkpoints.
TEST(NumeraireProperty, SupermartingaleMeans) {
  Mat c(3, 3);
  c << 0.2, 0.05, 0.0, 0.05, 0.15, 0.02, 0.0, 0.02, 0.1;
  auto params = constant_market(vec({0.08, 0.05, 0.02}), c, 0.01, vec({1.0, 1.0, 1.0}));
  const Vec base = params.a.constant_value();
  // Drift tilted toward the current leader so rho changes along the path.
  params.a = VectorSpec::state_function([base](double, const Vec& kappa) -> Vec { return base + 0.1 * kappa; });
  const PathGrid grid{0.0, 2e-2, 50};
  const std::vector<int> checkpoints{0, 10, 25, 50};
  const int n_paths = 2000;
  std::mt19937_64 gen(3);
  std::vector<Vec> portfolios;
  for (int m = 0; m < 5; ++m) {
    Vec pi = Vec::Random(3).cwiseAbs();
    portfolios.push_back(pi / pi.sum());
  }
  std::vector<std::vector<std::vector<double>>> ratio(portfolios.size(),
                                                      std::vector<std::vector<double>>(checkpoints.size()));
  for (int p = 0; p < n_paths; ++p) {
    const auto path = simulate_caps_path(params, grid, 21, static_cast<std::uint64_t>(p));
    const PathView view{params, grid, path.kappa, path.dW};
    const Vec log_rho = log_growth_optimal_wealth(view);
    for (std::size_t m = 0; m < portfolios.size(); ++m) {
      const Vec log_pi = log_wealth_path(VectorSpec::constant(portfolios[m]), view);
      for (std::size_t q = 0; q < checkpoints.size(); ++q)
        ratio[m][q].push_back(std::exp(log_pi(checkpoints[q]) - log_rho(checkpoints[q])));
    }
  }
  for (std::size_t m = 0; m < portfolios.size(); ++m)
    for (std::size_t q = 1; q < checkpoints.size(); ++q) {
      std::vector<double> diff(n_paths);
      for (int p = 0; p < n_paths; ++p) diff[p] = ratio[m][q][p] - ratio[m][q - 1][p];
      const auto ms = mean_se(diff);
      EXPECT_LE(ms.mean, 3.0 * ms.se) << "portfolio " << m << " checkpoint " << q;
    }
}

// Finite family of portfolios: P[sup_t V^pi / V^rho > m] <= 1/m.
TEST(NumeraireProperty, MaximalInequalityOnFiniteFamily) {
  const PathGrid grid{0.0, 1e-2, 2000};
  const auto params = two_company(0.25, 1.0);
  const int n_paths = 400;
  const std::vector<double> levels{1.5, 2.0, 4.0};
  std::vector<Vec> family{vec({0.0, 1.0}), vec({1.0, 0.0}), vec({0.3, 0.7}), vec({0.9, 0.1})};
  std::vector<std::vector<int>> exceed(family.size(), std::vector<int>(levels.size(), 0));
  for (int p = 0; p < n_paths; ++p) {
    const auto path = simulate_caps_path(params, grid, 31, static_cast<std::uint64_t>(p));
    const PathView view{params, grid, path.kappa, path.dW};
    const Vec log_rho = log_growth_optimal_wealth(view);
    for (std::size_t m = 0; m < family.size(); ++m) {
      const double sup = (log_wealth_path(VectorSpec::constant(family[m]), view) - log_rho).maxCoeff();
      for (std::size_t q = 0; q < levels.size(); ++q) exceed[m][q] += sup > std::log(levels[q]);
    }
  }
  for (std::size_t m = 0; m < family.size(); ++m)
    for (std::size_t q = 0; q < levels.size(); ++q) {
      const double bound = 1.0 / levels[q];
      const double se = std::sqrt(bound * (1.0 - bound) / n_paths);
      EXPECT_LE(static_cast<double>(exceed[m][q]) / n_paths, bound + 3.0 * se);
    }
}
