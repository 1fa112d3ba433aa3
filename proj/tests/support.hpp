#pragma once

#include <cmath>
#include <initializer_list>
#include <vector>

#include "balmkt/market_model.hpp"

namespace balmkt::testing {

inline Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

inline MarketParams constant_market(Vec a, Mat c, double r, Vec s0) {
  MarketParams p;
  p.d = static_cast<int>(a.size());
  p.a = VectorSpec::constant(std::move(a));
  p.c = MatrixSpec::constant(std::move(c));
  p.r = ScalarSpec::constant(r);
  p.s0 = std::move(s0);
  return p;
}

struct MeanSe {
  double mean, se;
};

inline MeanSe mean_se(const std::vector<double>& x) {
  double m = 0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double var = 0;
  for (double v : x) var += (v - m) * (v - m);
  var /= static_cast<double>(x.size() - 1);
  return {m, std::sqrt(var / static_cast<double>(x.size()))};
}

}  // namespace balmkt::testing
