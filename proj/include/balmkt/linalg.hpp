#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "balmkt/errors.hpp"

namespace balmkt {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Relative tolerance used for every symmetry / semidefiniteness decision.
inline constexpr double kPsdTolerance = 1e-10;

inline double max_abs(const Mat& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

inline double psd_scale(const Mat& m) { return std::max(1.0, max_abs(m)); }

inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline bool is_symmetric(const Mat& m, double rel_tol = kPsdTolerance) {
  if (m.rows() != m.cols()) return false;
  return max_abs(m - m.transpose()) <= rel_tol * psd_scale(m);
}

inline double min_eigenvalue(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// Entries nonnegative (down to -tol) and summing to one within tol.
inline bool is_in_simplex(const Vec& v, double tol = 1e-9) {
  if (v.size() == 0) return false;
  if (!v.allFinite()) return false;
  return v.minCoeff() >= -tol && std::abs(v.sum() - 1.0) <= tol;
}

namespace detail {

// Lower-triangular factor of the eigen-clipped matrix: with B = V sqrt(max(L, 0)),
// QR of B^T gives B B^T = R^T R, so R^T is a valid lower-triangular root.
inline Mat psd_factor_by_eigen(const Mat& c) {
  const double tol = kPsdTolerance * psd_scale(c);
  Eigen::SelfAdjointEigenSolver<Mat> es(c);
  const Vec& lambda = es.eigenvalues();
  if (lambda.minCoeff() < -tol) {
    throw Error(ErrorCode::IndefiniteMatrix,
                "eigenvalue " + std::to_string(lambda.minCoeff()) + " below -tolerance");
  }
  const Mat b = es.eigenvectors() * lambda.cwiseMax(0.0).cwiseSqrt().asDiagonal();
  Eigen::HouseholderQR<Mat> qr(b.transpose());
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  return r.transpose();
}

}  // namespace detail

/// Lower-triangular sigma with sigma * sigma^T = c, for symmetric PSD c.
///
/// Plain Cholesky is attempted first; a non-positive pivot zeroes its column,
/// which handles exactly singular inputs such as diag(0, s). Anything the fast
/// path cannot reproduce to tolerance goes through an eigen-clipped QR
/// factorization, which is also where indefiniteness is diagnosed.
inline Mat psd_factor(const Mat& c) {
  if (c.rows() != c.cols()) throw Error(ErrorCode::ShapeMismatch, "psd_factor needs a square matrix");
  if (!all_finite(c)) throw Error(ErrorCode::NonFiniteValue, "covariance has non-finite entries");
  if (!is_symmetric(c)) throw Error(ErrorCode::AsymmetricCovariance, "covariance is not symmetric");

  const Eigen::Index d = c.rows();
  const double scale = psd_scale(c);
  const double tol = kPsdTolerance * scale;
  Mat l = Mat::Zero(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    double s = c(j, j);
    for (Eigen::Index k = 0; k < j; ++k) s -= l(j, k) * l(j, k);
    if (s < -tol) return detail::psd_factor_by_eigen(c);
    if (s <= 0.0) {
      // Zero pivot: the rest of the Schur column must vanish as well.
      for (Eigen::Index i = j + 1; i < d; ++i) {
        double r = c(i, j);
        for (Eigen::Index k = 0; k < j; ++k) r -= l(i, k) * l(j, k);
        if (std::abs(r) > 0.1 * tol) return detail::psd_factor_by_eigen(c);
      }
      continue;
    }
    const double pivot = std::sqrt(s);
    l(j, j) = pivot;
    for (Eigen::Index i = j + 1; i < d; ++i) {
      double r = c(i, j);
      for (Eigen::Index k = 0; k < j; ++k) r -= l(i, k) * l(j, k);
      l(i, j) = r / pivot;
    }
  }
  if (!l.allFinite() || max_abs(l * l.transpose() - c) > tol) return detail::psd_factor_by_eigen(c);
  return l;
}

}  // namespace balmkt
