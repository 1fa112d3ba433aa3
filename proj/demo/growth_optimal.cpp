// Growth-optimal weights for a small constant market, under the three
// constraint sets, and the growth-rate gap of a few familiar portfolios.

#include <cstdio>

#include "balmkt/growth_opt.hpp"

using namespace balmkt;

namespace {

void show(const char* label, const GrowthSolution& s) {
  std::printf("%-12s rho = (", label);
  for (Eigen::Index i = 0; i < s.rho.size(); ++i) std::printf("%s%.4f", i ? ", " : "", s.rho(i));
  std::printf(")  g* = %.6f", s.g_star);
  if (s.implied_rate) std::printf("  implied r = %.4f", *s.implied_rate);
  std::printf("\n");
}

}  // namespace

int main() {
  Vec a(3);
  a << 0.07, 0.12, 0.02;
  Mat c(3, 3);
  c << 0.04, 0.01, 0.00,
       0.01, 0.09, 0.02,
       0.00, 0.02, 0.16;
  const double r = 0.01;

  const auto simplex = growth_optimal_constrained({a, c, r, ConstraintSet::simplex()});
  const auto plane = growth_optimal_constrained({a, c, r, ConstraintSet::hyperplane()});
  const auto boxed = growth_optimal_constrained({a, c, r, ConstraintSet::box(Vec::Constant(3, -0.5), Vec::Constant(3, 1.5))});
  show("simplex", simplex);
  show("hyperplane", plane);
  show("box", boxed);

  std::printf("\ngrowth gap g* - g(pi) on the simplex:\n");
  std::printf("  uniform     %.6f\n", simplex.g_star - growth_rate(uniform_portfolio(3), a, c, r));
  for (int i = 0; i < 3; ++i)
    std::printf("  all in %d    %.6f\n", i, simplex.g_star - growth_rate(unit_vector(3, i), a, c, r));
}
