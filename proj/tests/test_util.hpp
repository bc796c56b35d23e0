#pragma once

// Shared generators for the test suites; everything is seeded through the
// library's own counter RNG so failures reproduce exactly.

#include <Eigen/Dense>

#include "rsr/common.hpp"

namespace test_util {

inline Eigen::MatrixXd gaussian(int rows, int cols, rsr::CounterRng& rng) {
  Eigen::MatrixXd g(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) g(i, j) = rng.normal();
  return g;
}

inline Eigen::VectorXd gaussian_vec(int n, rsr::CounterRng& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

/// Random symmetric positive definite matrix with eigenvalues >= ridge.
inline Eigen::MatrixXd random_spd(int n, rsr::CounterRng& rng, double ridge = 0.1) {
  Eigen::MatrixXd g = gaussian(n, n, rng);
  Eigen::MatrixXd s = g * g.transpose() / n + ridge * Eigen::MatrixXd::Identity(n, n);
  return 0.5 * (s + s.transpose());
}

/// Random PSD matrix of the given rank.
inline Eigen::MatrixXd random_psd_rank(int n, int rank, rsr::CounterRng& rng) {
  Eigen::MatrixXd c = gaussian(n, rank, rng);
  Eigen::MatrixXd s = c * c.transpose();
  return 0.5 * (s + s.transpose());
}

inline Eigen::MatrixXd random_orthonormal(int rows, int cols, rsr::CounterRng& rng) {
  Eigen::MatrixXd g = gaussian(rows, cols, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
}

}  // namespace test_util
