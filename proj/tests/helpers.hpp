#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Dense>

// Shared helpers for the test suite.  Test-side randomness deliberately uses
// std::mt19937_64 directly (not the library stream) so library bugs cannot
// cancel out in the comparisons.
namespace testutil {

inline std::mt19937_64 engine(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

inline double unif(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double gauss(std::mt19937_64& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

inline Eigen::MatrixXd random_matrix(int rows, int cols,
                                     std::mt19937_64& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = gauss(rng);
  }
  return m;
}

inline Eigen::MatrixXd random_spd(int n, std::mt19937_64& rng) {
  Eigen::MatrixXd b = random_matrix(n, n, rng);
  return b.transpose() * b + 0.5 * Eigen::MatrixXd::Identity(n, n);
}

// Symmetric zero-diagonal matrix with N(0,1) strict-lower entries.
inline Eigen::MatrixXd random_hollow_symmetric(int n, std::mt19937_64& rng) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < n; ++k) {
    for (int j = k + 1; j < n; ++j) {
      const double v = gauss(rng);
      m(j, k) = v;
      m(k, j) = v;
    }
  }
  return m;
}

// Central finite-difference gradient of a scalar function of a matrix.
template <typename Fn>
Eigen::MatrixXd fd_gradient(Fn&& f, const Eigen::MatrixXd& x, double h) {
  Eigen::MatrixXd g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      Eigen::MatrixXd xp = x, xm = x;
      xp(i, j) += h;
      xm(i, j) -= h;
      g(i, j) = (f(xp) - f(xm)) / (2.0 * h);
    }
  }
  return g;
}

inline double sample_mean(const Eigen::VectorXd& v) { return v.mean(); }

inline double sample_var(const Eigen::VectorXd& v) {
  const double m = v.mean();
  return (v.array() - m).square().sum() / (v.size() - 1);
}

// First two moments of an unnormalized log density on [lo, hi] by the
// trapezoid rule in log space (max-subtracted for stability).
struct GridMoments {
  double mean;
  double var;
};

template <typename LogF>
GridMoments grid_moments(LogF&& logf, double lo, double hi, int points) {
  Eigen::VectorXd x(points), lw(points);
  const double step = (hi - lo) / (points - 1);
  for (int i = 0; i < points; ++i) {
    x[i] = lo + i * step;
    lw[i] = logf(x[i]);
  }
  const double mx = lw.maxCoeff();
  double z = 0.0, m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < points; ++i) {
    double w = std::exp(lw[i] - mx);
    if (i == 0 || i == points - 1) w *= 0.5;
    z += w;
    m1 += w * x[i];
    m2 += w * x[i] * x[i];
  }
  const double mean = m1 / z;
  return {mean, m2 / z - mean * mean};
}

}  // namespace testutil
