#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "bsnmani/errors.hpp"

namespace bsnmani {

// Number of strictly-lower-triangle entries of an n x n matrix.
inline int pair_count(int n) {
  if (n < 2) throw DimensionError("pair_count: need n >= 2");
  return n * (n - 1) / 2;
}

// Strict lower triangle of a square matrix, stacked column-major:
// (2,1), (3,1), ..., (n,1), (3,2), ..., (n,2), ..., (n,n-1)  [1-based].
inline Eigen::VectorXd vecl(const Eigen::MatrixXd& b) {
  if (b.rows() != b.cols()) throw DimensionError("vecl: matrix must be square");
  const int n = static_cast<int>(b.rows());
  Eigen::VectorXd v(pair_count(n));
  int idx = 0;
  for (int k = 0; k < n; ++k) {
    for (int j = k + 1; j < n; ++j) v[idx++] = b(j, k);
  }
  return v;
}

// Symmetric hollow (zero-diagonal) matrix, stored dense for fast products;
// the strict lower triangle in vecl order is the canonical serialization.
class SymmetricNetwork {
 public:
  SymmetricNetwork() = default;

  static SymmetricNetwork from_vecl(const Eigen::VectorXd& v, int n) {
    if (n < 2) throw DimensionError("SymmetricNetwork: need n >= 2");
    if (v.size() != pair_count(n)) {
      throw DimensionError("SymmetricNetwork: vecl length != n(n-1)/2");
    }
    SymmetricNetwork y;
    y.m_.setZero(n, n);
    int idx = 0;
    for (int k = 0; k < n; ++k) {
      for (int j = k + 1; j < n; ++j) {
        y.m_(j, k) = v[idx];
        y.m_(k, j) = v[idx];
        ++idx;
      }
    }
    return y;
  }

  // Reads the strict lower triangle of a dense matrix; the diagonal is
  // discarded (implicitly zero) and asymmetry beyond a small tolerance is
  // rejected to catch accidental misuse.
  static SymmetricNetwork from_dense(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols()) {
      throw DimensionError("SymmetricNetwork: matrix must be square");
    }
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
      throw ValidationError("SymmetricNetwork: input is not symmetric");
    }
    return from_vecl(bsnmani::vecl(m), static_cast<int>(m.rows()));
  }

  int n() const { return static_cast<int>(m_.rows()); }
  int n_pairs() const { return pair_count(n()); }

  double operator()(int j, int k) const { return m_(j, k); }

  // Dense symmetric view (zero diagonal).
  const Eigen::MatrixXd& dense() const { return m_; }

  Eigen::VectorXd vecl() const { return bsnmani::vecl(m_); }

 private:
  Eigen::MatrixXd m_;
};

// Inverse of vecl for the symmetric-hollow case: devecl(vecl(Y), n) == Y.
inline SymmetricNetwork devecl(const Eigen::VectorXd& v, int n) {
  return SymmetricNetwork::from_vecl(v, n);
}

}  // namespace bsnmani
