#pragma once

// Independent oracles shared by the test suites: central finite differences
// for gradients and tolerant elementwise comparison. These deliberately avoid
// the library's own backward code paths.

#include <gtest/gtest.h>

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "mtda/autodiff.hpp"

namespace oracle {

using Matrix = Eigen::MatrixXd;

/// Central-difference gradient of `scalar_fn` w.r.t. every entry of `m`.
/// `scalar_fn` must read `m` afresh on each call; `m` is restored afterwards.
inline Matrix fd_gradient(Matrix& m, const std::function<double()>& scalar_fn,
                          double step = 1e-5) {
  Matrix g(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double orig = m(i, j);
      m(i, j) = orig + step;
      const double up = scalar_fn();
      m(i, j) = orig - step;
      const double down = scalar_fn();
      m(i, j) = orig;
      g(i, j) = (up - down) / (2.0 * step);
    }
  }
  return g;
}

/// True when |a-b| <= atol + rtol * max(|a|, |b|) holds elementwise.
inline bool all_close(const Matrix& a, const Matrix& b, double rtol = 1e-4,
                      double atol = 1e-7) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double tol = atol + rtol * std::max(std::abs(a(i, j)), std::abs(b(i, j)));
      if (std::abs(a(i, j) - b(i, j)) > tol) return false;
    }
  return true;
}

/// Largest |a-b| over all entries, for failure diagnostics.
inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

/// Builds the graph once for reverse-mode gradients, then checks each listed
/// parameter against central differences of the rebuilt forward value.
/// `build` must construct the full graph from scratch (including fresh
/// randomness with a fixed seed, if any) and return the scalar root.
inline void expect_matches_fd(const std::vector<Matrix*>& params,
                              const std::function<mtda::ad::Value(mtda::ad::Tape&)>& build,
                              double rtol = 1e-4, double atol = 1e-7,
                              double step = 1e-5) {
  mtda::ad::Tape tape;
  const mtda::ad::Value root = build(tape);
  tape.zero_grad();
  tape.backward(root);
  const auto forward_value = [&build]() {
    mtda::ad::Tape t;
    return t.val(build(t))(0, 0);
  };
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Matrix analytic = tape.grad_of(*params[k]);
    const Matrix numeric = fd_gradient(*params[k], forward_value, step);
    EXPECT_TRUE(all_close(analytic, numeric, rtol, atol))
        << "parameter " << k << ": max |analytic - numeric| = "
        << max_abs_diff(analytic, numeric);
  }
}

/// Fills a matrix with standard normal draws from the given source.
inline Matrix random_matrix(mtda::Rng& rng, int rows, int cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

}  // namespace oracle
