// One path each from a balanced market and two unbalanced two-company
// markets, with the loss of balance L_t at a few times.
//
//   balance_paths [seed]

#include <cstdio>
#include <cstdlib>

#include "balmkt/balance_diag.hpp"
#include "balmkt/sde_engine.hpp"

using namespace balmkt;

namespace {

void report(const char* label, const MarketParams& params, const PathGrid& grid, std::uint64_t seed) {
  const auto path = simulate_caps_path(params, grid, seed, 0);
  const PathView view{params, grid, path.kappa, path.dW};
  const auto rep = balance_report(view);
  std::printf("%-26s", label);
  for (int q = 1; q <= 4; ++q) std::printf("  L(%4.0f) = %9.4f", grid.time(q * grid.n_steps / 4), rep.l_path(q * grid.n_steps / 4));
  std::printf("  kappa_T = (%.3f, %.3f)  %s\n", path.kappa(0, grid.n_steps), path.kappa(1, grid.n_steps),
              to_string(rep.classification).c_str());
}

MarketParams two_company(double abar, double sigma) {
  Vec a(2);
  a << 0.0, abar;
  Mat c = Mat::Zero(2, 2);
  c(1, 1) = sigma * sigma;
  return {2, VectorSpec::constant(a), MatrixSpec::constant(c), ScalarSpec::constant(0.0), Vec::Ones(2)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 11;
  const auto grid = PathGrid::from_horizon(200.0, 0.01);

  Mat c(2, 2);
  c << 0.04, 0.01, 0.01, 0.09;
  Vec s0(2);
  s0 << 1.0, 1.0;
  report("balanced (a = c kappa + r)", balanced_market(MatrixSpec::constant(c), ScalarSpec::constant(0.01), s0), grid, seed);
  report("a = (0, 0), sigma = 1", two_company(0.0, 1.0), grid, seed);
  report("a = (0, 1/2), sigma = 1", two_company(0.5, 1.0), grid, seed);
}
