#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "balmkt/jump_markets.hpp"
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

Mat random_psd(std::mt19937_64& gen, int d, double scale = 0.3) {
  std::normal_distribution<double> n01;
  Mat a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = n01(gen);
  return scale * a.transpose() * a / d;
}

Vec random_interior(std::mt19937_64& gen, int d) {
  std::exponential_distribution<double> e(1.0);
  Vec x(d);
  for (int i = 0; i < d; ++i) x(i) = e(gen) + 1e-3;
  return x / x.sum();
}

std::vector<JumpAtom> random_atoms(std::mt19937_64& gen, int d, int n, bool allow_death = false) {
  std::uniform_real_distribution<double> u(-0.9, 2.0);
  std::uniform_real_distribution<double> w(0.1, 1.0);
  std::vector<JumpAtom> atoms;
  for (int m = 0; m < n; ++m) {
    Vec x(d);
    for (int i = 0; i < d; ++i) x(i) = u(gen);
    if (allow_death && m == 0) x(0) = -1.0;
    atoms.push_back({w(gen), x});
  }
  return atoms;
}

}  // namespace

TEST(JumpSpec, MissingRuleIsReported) {
  JumpSpec empty;
  std::vector<JumpAtom> atoms;
  EXPECT_EQ(code_of([&] { empty.evaluate(0.0, Vec::Constant(2, 0.5), 0, atoms); }),
            ErrorCode::CompensatorUnavailable);
  EXPECT_EQ(code_of([&] {
              simulate_jump_path(MatrixSpec::constant(Mat::Identity(2, 2)), empty, Vec::Constant(2, 0.5),
                                 PathGrid{0.0, 0.1, 3}, 1, 0);
            }),
            ErrorCode::CompensatorUnavailable);
  EXPECT_EQ(code_of([&] { drift_from_balance_jump(Vec::Constant(2, 0.5), Mat::Zero(2, 2), empty, 0.0); }),
            ErrorCode::CompensatorUnavailable);
  auto too_fast = JumpSpec::constant({{2.0, vec({0.1, 0.0})}});
  too_fast.lambda_max = 1.0;
  EXPECT_EQ(code_of([&] { too_fast.evaluate(0.0, Vec::Constant(2, 0.5), 0, atoms); }),
            ErrorCode::InfeasibleConstraint);
}

TEST(ApplyJump, HandArithmetic) {
  Vec kappa = vec({0.5, 0.5});
  apply_jump(kappa, vec({0.0, 1.0}));
  EXPECT_NEAR(kappa(0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(kappa(1), 2.0 / 3.0, 1e-15);

  LifetimeRecord life(3);
  kappa = vec({0.2, 0.3, 0.5});
  apply_jump(kappa, vec({-1.0, 0.5, 0.0}), &life, 1.5);
  EXPECT_EQ(kappa(0), 0.0);
  EXPECT_EQ(life.mode[0], DeathMode::JumpToZero);
  EXPECT_EQ(life.zeta(0), 1.5);
  EXPECT_NEAR(kappa.sum(), 1.0, 1e-15);
}

TEST(ApplyJump, PropertyPreservesClosedSimplex) {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(-1.0, 3.0);
  std::bernoulli_distribution at_minus_one(0.1);
  for (int trial = 0; trial < 100000; ++trial) {
    const int d = 2 + trial % 5;
    Vec kappa = random_interior(gen, d);
    Vec x(d);
    for (int i = 0; i < d; ++i) x(i) = at_minus_one(gen) ? -1.0 : u(gen);
    if ((x.array() == -1.0).all()) x(0) = 0.0;
    apply_jump(kappa, x);
    ASSERT_GE(kappa.minCoeff(), 0.0);
    ASSERT_NEAR(kappa.sum(), 1.0, 1e-9);
  }
}

TEST(SimulateJumpBalanced, ZeroIntensityMatchesContinuousEngine) {
  std::mt19937_64 gen(3);
  const Mat c = random_psd(gen, 3);
  const auto c_spec = MatrixSpec::constant(c);
  const Vec kappa0 = vec({0.2, 0.3, 0.5});
  const PathGrid grid{0.0, 1e-3, 500};
  for (std::uint64_t p = 0; p < 5; ++p) {
    const auto cont = simulate_balanced_path(c_spec, kappa0, grid, 19, p);
    for (const auto& spec : {JumpSpec::none(), JumpSpec::constant({})}) {
      const auto jump = simulate_jump_path(c_spec, spec, kappa0, grid, 19, p);
      EXPECT_EQ((jump.path.kappa - cont.kappa).cwiseAbs().maxCoeff(), 0.0);
      EXPECT_EQ((jump.path.dW - cont.dW).cwiseAbs().maxCoeff(), 0.0);
      EXPECT_TRUE(jump.jump_times.empty());
    }
  }
}

TEST(DriftFromBalanceJump, ContinuousCase) {
  Mat c(2, 2);
  c << 0.3, 0.1, 0.1, 0.2;
  const Vec kappa = vec({0.4, 0.6});
  const Vec b = drift_from_balance_jump(kappa, c, JumpSpec::none(), 0.05);
  EXPECT_LE((b - (c * kappa + Vec::Constant(2, 0.05))).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(DriftFromBalanceJump, DeathExampleOde) {
  const auto jumps = death_example::jumps();
  for (double t : {0.0, 0.3, 0.9, 1.3}) {
    const double k1 = death_example::kappa1(t);
    const Vec kappa = vec({1.0 - k1, k1});
    std::vector<JumpAtom> atoms;
    jumps.evaluate(t, kappa, 0, atoms);
    const Vec b = drift_from_balance_jump(kappa, Mat::Zero(2, 2), atoms, 0.0);
    const Vec drift = relcap_drift_jump(kappa, b, Mat::Zero(2, 2), atoms);
    // The balanced drift leaves only the compensator: d kappa^1 / dt = -kappa^1 (1 - kappa^1) l / (1 + kappa^1 l).
    const double l = death_example::jump_size(t);
    EXPECT_NEAR(drift(1), 0.0, 1e-12);
    const double compensated = -k1 * (1.0 - k1) * l / (1.0 + k1 * l);
    Vec comp = Vec::Zero(2);
    for (const auto& a : atoms) comp -= a.weight * kappa.cwiseProduct(a.x - Vec::Constant(2, kappa.dot(a.x))) / (1.0 + kappa.dot(a.x));
    EXPECT_NEAR(comp(1), compensated, 1e-12);
    // The analytic kappa^1 = 1 - e^{t/2}/2 solves that equation.
    EXPECT_NEAR(-0.25 * std::exp(0.5 * t), compensated, 1e-12);
  }
}

TEST(DriftFromBalanceJump, SmallJumpsAreSecondOrder) {
  std::mt19937_64 gen(11);
  const Vec kappa = vec({0.2, 0.5, 0.3});
  std::vector<JumpAtom> base = random_atoms(gen, 3, 4);
  for (auto& a : base) a.x = a.x.normalized() * 0.9;
  std::vector<double> size;
  for (double h : {1.0, 0.5, 0.25}) {
    std::vector<JumpAtom> scaled = base;
    for (auto& a : scaled) a.x *= h;
    const Vec term = drift_from_balance_jump(kappa, Mat::Zero(3, 3), scaled, 0.0);
    size.push_back(term.norm());
  }
  EXPECT_NEAR(size[0] / size[1], 4.0, 1.0);
  EXPECT_NEAR(size[1] / size[2], 4.0, 0.5);
}

TEST(RelRateOfReturn, Examples) {
  std::mt19937_64 gen(13);
  const Mat c = random_psd(gen, 3);
  const auto atoms = random_atoms(gen, 3, 3);
  const Vec b = vec({0.1, 0.05, 0.2});
  const Vec rho = random_interior(gen, 3);
  EXPECT_EQ(rel_rate_of_return(rho, rho, b, c, atoms, 0.01), 0.0);

  const Vec a = vec({0.1, 0.3, 0.2});
  const auto hyper = growth_optimal_hyperplane(a, Mat::Identity(3, 3));
  EXPECT_NEAR(rel_rate_of_return(vec({2.0, -3.0, 2.0}), hyper.rho, a, Mat::Identity(3, 3), {}, *hyper.implied_rate), 0.0,
              1e-12);

  // Balanced market: every company earns the market's rate.
  const auto jumps = death_example::jumps();
  for (double t : {0.1, 0.7, 1.2}) {
    const double k1 = death_example::kappa1(t);
    const Vec kappa = vec({1.0 - k1, k1});
    std::vector<JumpAtom> now;
    jumps.evaluate(t, kappa, 0, now);
    const Vec bb = drift_from_balance_jump(kappa, Mat::Zero(2, 2), now, 0.0);
    for (int i = 0; i < 2; ++i)
      EXPECT_NEAR(rel_rate_of_return(unit_vector(2, i), kappa, bb, Mat::Zero(2, 2), now, 0.0), 0.0, 1e-12);
  }
}

TEST(GrowthOptimalJump, PropertyNumeraireConditions) {
  std::mt19937_64 gen(17);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 300; ++trial) {
    const int d = 2 + trial % 4;
    const Mat c = random_psd(gen, d, trial % 3 == 0 ? 0.0 : 0.3);
    const auto atoms = random_atoms(gen, d, 1 + trial % 3, trial % 5 == 0);
    Vec b(d);
    for (int i = 0; i < d; ++i) b(i) = 0.3 * n01(gen);
    const double r = 0.01;
    const Vec kappa = random_interior(gen, d);
    const auto opt = growth_optimal_jump(b, c, atoms, r, kappa);
    ASSERT_TRUE(is_in_simplex(opt.rho, 1e-9));
    EXPECT_LE(rel_rate_of_return(kappa, opt.rho, b, c, atoms, r), 1e-8) << "trial " << trial;
    for (int m = 0; m < 200; ++m) {
      const Vec pi = random_interior(gen, d);
      ASSERT_LE(rel_rate_of_return(pi, opt.rho, b, c, atoms, r), 1e-8) << "trial " << trial;
      ASSERT_GE(opt.g_star, jump_growth_rate(pi, b, c, atoms, r) - 1e-12);
    }
    for (int i = 0; i < d; ++i) ASSERT_LE(rel_rate_of_return(unit_vector(d, i), opt.rho, b, c, atoms, r), 1e-8);
  }
}

TEST(GrowthOptimalJump, NoJumpsIsTheExactQp) {
  const Vec a = vec({0.0, 10.0});
  const auto opt = growth_optimal_jump(a, Mat::Identity(2, 2), {}, 0.0, vec({0.5, 0.5}));
  EXPECT_LE((opt.rho - vec({0.0, 1.0})).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(LossOfBalanceJump, BalancedMarketIsZero) {
  std::mt19937_64 gen(19);
  const Mat c = random_psd(gen, 3);
  const auto jumps = JumpSpec::constant(random_atoms(gen, 3, 2));
  const JumpMarket market{3, MatrixSpec::constant(c), ScalarSpec::constant(0.02), jumps, std::nullopt};
  const PathGrid grid{0.0, 1e-3, 400};
  const auto jp = simulate_jump_path(market.c, jumps, vec({0.3, 0.3, 0.4}), grid, 5, 0);
  const Vec l = loss_of_balance_jump({market, grid, jp.path.kappa, jp.jump_steps});
  EXPECT_LE(l(grid.n_steps), 1e-9);
}

TEST(LossOfBalanceJump, DeathExampleIsZero) {
  const auto market = death_example::market();
  const PathGrid grid{0.0, 1e-3, 1500};
  for (std::uint64_t p = 0; p < 4; ++p) {
    const auto jp = simulate_jump_path(market.c, market.jumps, death_example::kappa0(), grid, 1, p);
    const Vec l = loss_of_balance_jump({market, grid, jp.path.kappa, jp.jump_steps});
    EXPECT_LE(l(grid.n_steps), 1e-9);
  }
}

TEST(LossOfBalanceJump, NoJumpsMatchesContinuousDefinition) {
  Mat c(2, 2);
  c << 0.0, 0.0, 0.0, 1.0;
  for (double abar : {0.0, 0.25, 0.5}) {
    const auto params = constant_market(vec({0.0, abar}), c, 0.0, vec({1.0, 1.0}));
    const JumpMarket market{2, params.c, params.r, JumpSpec::none(), params.a};
    const PathGrid grid{0.0, 1e-2, 300};
    const auto path = simulate_caps_path(params, grid, 3, 0);
    const std::vector<int> none;
    const Vec lj = loss_of_balance_jump({market, grid, path.kappa, none});
    const Vec lc = loss_of_balance({params, grid, path.kappa, path.dW});
    EXPECT_LE((lj - lc).cwiseAbs().maxCoeff(), 1e-9);

    // Same linear growth class for the distances; the integrands differ.
    const double dj = pairwise_distance_jump({market, grid, path.kappa, none}, 0, 1);
    const double dc = pairwise_distance({params, grid, path.kappa, path.dW}, 0, 1);
    EXPECT_GT(dj, 0.0);
    EXPECT_GT(dc, 0.0);
    if (abar == 0.0) {
      EXPECT_NEAR(dj, 0.5 * grid.horizon(), 1e-9);
      EXPECT_NEAR(dc, grid.horizon(), 1e-9);
    }
  }
}

TEST(PairwiseDistanceJump, IdenticalCompaniesAndDeathExample) {
  const Mat c = Mat::Constant(2, 2, 0.2);
  const auto jumps = JumpSpec::constant({{0.5, vec({0.3, 0.3})}, {0.5, vec({-0.2, -0.2})}});
  const JumpMarket twins{2, MatrixSpec::constant(c), ScalarSpec::constant(0.0), jumps, std::nullopt};
  const PathGrid grid{0.0, 1e-2, 200};
  const auto jp = simulate_jump_path(twins.c, jumps, vec({0.4, 0.6}), grid, 2, 0);
  EXPECT_NEAR(pairwise_distance_jump({twins, grid, jp.path.kappa, jp.jump_steps}, 0, 1), 0.0, 1e-12);

  const auto market = death_example::market();
  const PathGrid fine{0.0, 1e-3, 1000};
  const auto dp = simulate_jump_path(market.c, market.jumps, death_example::kappa0(), fine, 1, 0);
  const Vec dist = pairwise_distance_jump_path({market, fine, dp.path.kappa, dp.jump_steps}, 0, 1);
  const int last = dp.jump_steps.empty() ? fine.n_steps : std::min(fine.n_steps, dp.jump_steps.front());
  for (int k = 0; k < last; ++k) {
    const double l = death_example::jump_size(fine.time(k));
    const double lg = std::log(1.0 / (1.0 + l));
    const double jump_term = std::min(1.0, lg * lg);
    ASSERT_GT(dist(k + 1) - dist(k), 0.0);
    ASSERT_GE((dist(k + 1) - dist(k)) / fine.dt, jump_term - 1e-12);
  }
}

TEST(SimulateJumpBalanced, MartingaleMeansAndDeadStayDead) {
  std::mt19937_64 gen(23);
  const Mat c = random_psd(gen, 3);
  // Company 0 starts small; the atom (-1, 0, 0) wipes it out.
  auto atoms = random_atoms(gen, 3, 2);
  atoms.push_back({0.3, vec({-1.0, 0.0, 0.0})});
  const auto jumps = JumpSpec::constant(atoms);
  const Vec kappa0 = vec({0.1, 0.4, 0.5});
  const PathGrid grid{0.0, 1e-3, 1000};
  const int n_paths = 4000;
  const auto set = simulate_jump_balanced(MatrixSpec::constant(c), jumps, kappa0, grid, n_paths, 29,
                                          {.stride = 250, .keep_increments = false});
  int deaths = 0;
  for (int i = 0; i < 3; ++i) {
    for (std::size_t col = 1; col < set.paths.stored_steps.size(); ++col) {
      std::vector<double> x;
      for (const auto& k : set.paths.kappa) x.push_back(k(i, static_cast<Eigen::Index>(col)));
      const auto ms = mean_se(x);
      EXPECT_LE(std::abs(ms.mean - kappa0(i)), 3.0 * ms.se + 1e-12) << "company " << i << " column " << col;
    }
  }
  for (int p = 0; p < n_paths; ++p) {
    const auto& life = set.lifetimes[p];
    const Mat& k = set.paths.kappa[p];
    for (int i = 0; i < 3; ++i) {
      if (life.alive(i)) continue;
      ++deaths;
      for (std::size_t col = 0; col < set.paths.stored_steps.size(); ++col) {
        if (grid.time(set.paths.stored_steps[col]) >= life.zeta(i)) {
          ASSERT_EQ(k(i, static_cast<Eigen::Index>(col)), 0.0);
        }
      }
    }
    ASSERT_TRUE(is_in_simplex(k.col(k.cols() - 1), 1e-9));
  }
  EXPECT_GT(deaths, 0);
}

TEST(SimulateJumpBalanced, ThreadCountDoesNotMatter) {
  std::mt19937_64 gen(31);
  const auto jumps = JumpSpec::constant(random_atoms(gen, 2, 2));
  const auto c = MatrixSpec::constant(random_psd(gen, 2));
  const PathGrid grid{0.0, 1e-2, 200};
  const auto one = simulate_jump_balanced(c, jumps, vec({0.5, 0.5}), grid, 40, 3, {.threads = 1});
  const auto many = simulate_jump_balanced(c, jumps, vec({0.5, 0.5}), grid, 40, 3, {.threads = 4});
  for (int p = 0; p < 40; ++p) {
    ASSERT_EQ((one.paths.kappa[p] - many.paths.kappa[p]).cwiseAbs().maxCoeff(), 0.0);
    ASSERT_EQ(one.jump_steps[p], many.jump_steps[p]);
  }
}

TEST(JumpCounts, RealizedOverCompensatorTendsToOne) {
  const auto jumps = JumpSpec::constant({{1.5, vec({0.1, -0.05})}, {0.5, vec({-0.1, 0.2})}});
  const PathGrid grid{0.0, 1e-2, 20000};
  const auto set = simulate_jump_balanced(MatrixSpec::constant(Mat::Zero(2, 2)), jumps, vec({0.5, 0.5}), grid, 20, 5,
                                          {.stride = 20000, .keep_increments = false});
  int count = 0;
  double compensator = 0.0;
  for (int p = 0; p < 20; ++p) {
    count += static_cast<int>(set.jump_steps[p].size());
    compensator += set.intensity_integrals[p];
    EXPECT_NEAR(set.intensity_integrals[p], 2.0 * grid.horizon(), 1e-6);
  }
  EXPECT_NEAR(jump_count_ratio(count, compensator), 1.0, 3.0 / std::sqrt(compensator));
}

TEST(ExampleDeathOfCompany, MatchesClosedForm) {
  const PathGrid grid = PathGrid::from_horizon(1.5, 1e-3);
  const auto rep = example_death_of_company(grid, 2000, 42, default_thread_count(), 2);
  EXPECT_LE(rep.sup_error, 5.0 * grid.dt);
  EXPECT_LE(rep.max_death_time_error, 5.0 * grid.dt);
  EXPECT_TRUE(rep.all_continuous_vanish);
  EXPECT_NEAR(rep.dying_fraction, 0.25, 3.0 * rep.dying_se);
  EXPECT_EQ(rep.kept.size(), 2u);
  EXPECT_DOUBLE_EQ(death_example::kappa1(0.0), 0.5);
  EXPECT_NEAR(death_example::kDeathTime, 1.386294, 1e-6);
  EXPECT_EQ(code_of([] { example_death_of_company(PathGrid{0.0, 1e-3, 100}, 10, 1); }), ErrorCode::HorizonTooShort);
}
