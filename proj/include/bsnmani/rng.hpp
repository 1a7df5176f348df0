#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "bsnmani/errors.hpp"

namespace bsnmani {

// Deterministic random stream.  A stream is fully determined by
// (seed, stream_id); all samplers are implemented here rather than with
// std::*_distribution so that draw sequences do not depend on the standard
// library implementation.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : engine_(mix(seed, stream_id)) {}

  // Uniform on (0, 1); never returns exactly 0 or 1.
  double uniform() {
    // 53 random mantissa bits, shifted into (0, 1).
    const std::uint64_t bits = engine_() >> 11;
    const double u = (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
    return u;
  }

  // Standard normal via the Marsaglia polar method.  A cached spare keeps the
  // cost at ~1.27 uniforms per draw; the cache lives in the stream so the
  // sequence is still a pure function of (seed, stream_id).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  // Normal with mean mu and *variance* sigma_sq.
  double normal(double mu, double sigma_sq) {
    if (!(sigma_sq >= 0.0) || !std::isfinite(sigma_sq)) {
      throw ParameterError("normal: variance must be finite and >= 0");
    }
    return mu + std::sqrt(sigma_sq) * normal();
  }

  // Gamma(shape, rate) via Marsaglia-Tsang; shape < 1 is boosted through the
  // Gamma(shape + 1) * U^{1/shape} identity.
  double gamma(double shape, double rate) {
    if (!(shape > 0.0) || !(rate > 0.0)) {
      throw ParameterError("gamma: shape and rate must be > 0");
    }
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
        return d * v / rate;
      }
    }
  }

  double exponential(double rate) {
    if (!(rate > 0.0)) throw ParameterError("exponential: rate must be > 0");
    return -std::log(uniform()) / rate;
  }

  // Multivariate normal N(mean, cov); cov must be symmetric positive
  // definite (Cholesky is attempted directly and failure is an error).
  Eigen::VectorXd mvn(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
    if (cov.rows() != cov.cols() || cov.rows() != mean.size()) {
      throw DimensionError("mvn: covariance/mean dimensions disagree");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
      throw SingularityError("mvn: covariance is not positive definite");
    }
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal();
    return mean + llt.matrixL() * z;
  }

  // N(mean, precision^{-1}) sampled from the precision form:
  // precision = L L^T  =>  draw = mean + L^{-T} z.
  Eigen::VectorXd mvn_from_precision(const Eigen::VectorXd& mean,
                                     const Eigen::MatrixXd& precision) {
    if (precision.rows() != precision.cols() ||
        precision.rows() != mean.size()) {
      throw DimensionError("mvn_from_precision: dimensions disagree");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success) {
      throw SingularityError("mvn_from_precision: precision not SPD");
    }
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal();
    return mean + llt.matrixU().solve(z);
  }

  // n x q matrix with i.i.d. standard normal entries, filled row-major so the
  // draw order is part of the contract.
  Eigen::MatrixXd matrix_normal_std(int n, int q) {
    if (n <= 0 || q <= 0) {
      throw DimensionError("matrix_normal_std: dimensions must be positive");
    }
    Eigen::MatrixXd m(n, q);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < q; ++j) m(i, j) = normal();
    }
    return m;
  }

  std::uint64_t raw() { return engine_(); }

 private:
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream_id) {
    // splitmix64 finalizer over the pair; distinct (seed, id) pairs land in
    // distinct, well-spread engine seeds.
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream_id + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace bsnmani
