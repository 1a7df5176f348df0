#pragma once

#include <optional>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "bsnmani/errors.hpp"

namespace bsnmani {

namespace detail {

// (X^T X)^{-1/2} through the eigendecomposition of the q x q Gram matrix.
// Returns nullopt when the smallest eigenvalue falls below
// 1e-12 * largest (rank-deficient up to working precision).
inline std::optional<Eigen::MatrixXd> gram_inv_sqrt(const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd s = x.transpose() * x;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  if (es.info() != Eigen::Success) return std::nullopt;
  const Eigen::VectorXd& d = es.eigenvalues();  // ascending
  const double dmax = d[d.size() - 1];
  if (!(dmax > 0.0) || d[0] < 1e-12 * dmax) return std::nullopt;
  return es.eigenvectors() * d.cwiseSqrt().cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

}  // namespace detail

// Inverse matrix square root of a symmetric positive definite matrix.
inline Eigen::MatrixXd inv_sqrt_spd(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) {
    throw DimensionError("inv_sqrt_spd: matrix must be square");
  }
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw ValidationError("inv_sqrt_spd: input is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  if (es.info() != Eigen::Success) {
    throw NumericalError("inv_sqrt_spd: eigendecomposition failed");
  }
  const Eigen::VectorXd& d = es.eigenvalues();
  const double dmax = d[d.size() - 1];
  if (!(dmax > 0.0) || d[0] < 1e-12 * dmax) {
    throw SingularityError("inv_sqrt_spd: matrix is not positive definite");
  }
  return es.eigenvectors() * d.cwiseSqrt().cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

// Unconstrained n x q matrix of full column rank (the MALA chain lives here).
class EuclideanPoint {
 public:
  explicit EuclideanPoint(Eigen::MatrixXd x) : m_(std::move(x)) {
    if (m_.rows() < m_.cols() || m_.cols() < 1) {
      throw DimensionError("EuclideanPoint: need n >= q >= 1");
    }
    if (!m_.allFinite()) {
      throw NumericalError("EuclideanPoint: entries must be finite");
    }
    if (!detail::gram_inv_sqrt(m_)) {
      throw SingularityError("EuclideanPoint: matrix is rank deficient");
    }
  }

  int n() const { return static_cast<int>(m_.rows()); }
  int q() const { return static_cast<int>(m_.cols()); }
  const Eigen::MatrixXd& matrix() const { return m_; }

 private:
  Eigen::MatrixXd m_;
};

// Matrix with orthonormal columns: ||U^T U - I||_max <= 1e-10 is enforced at
// construction, so holding a StiefelPoint certifies the invariant.
class StiefelPoint {
 public:
  explicit StiefelPoint(Eigen::MatrixXd u) : m_(std::move(u)) {
    if (m_.rows() < m_.cols() || m_.cols() < 1) {
      throw DimensionError("StiefelPoint: need n >= q >= 1");
    }
    const Eigen::MatrixXd gram = m_.transpose() * m_;
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(m_.cols(), m_.cols());
    if (!m_.allFinite() || (gram - eye).cwiseAbs().maxCoeff() > 1e-10) {
      throw ValidationError("StiefelPoint: columns are not orthonormal");
    }
  }

  int n() const { return static_cast<int>(m_.rows()); }
  int q() const { return static_cast<int>(m_.cols()); }
  const Eigen::MatrixXd& matrix() const { return m_; }

 private:
  Eigen::MatrixXd m_;
};

namespace detail {

// Non-throwing polar factor for sampler hot paths: U = X (X^T X)^{-1/2},
// nullopt when X is numerically rank deficient.
inline std::optional<Eigen::MatrixXd> polar_factor(const Eigen::MatrixXd& x) {
  auto r = gram_inv_sqrt(x);
  if (!r) return std::nullopt;
  return x * (*r);
}

}  // namespace detail

// Polar expansion X -> X (X^T X)^{-1/2}, the surjection from full-rank
// matrices onto the Stiefel manifold used to transport the uniform prior.
inline StiefelPoint polar_expand(const EuclideanPoint& x) {
  auto u = detail::polar_factor(x.matrix());
  if (!u) throw SingularityError("polar_expand: rank-deficient input");
  return StiefelPoint(std::move(*u));
}

}  // namespace bsnmani
