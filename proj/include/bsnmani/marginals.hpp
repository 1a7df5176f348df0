#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bsnmani/data.hpp"
#include "bsnmani/errors.hpp"
#include "bsnmani/model.hpp"
#include "bsnmani/quadrature.hpp"
#include "bsnmani/rng.hpp"
#include "bsnmani/symmetric_network.hpp"

namespace bsnmani {

// Numerical hygiene counters for one integral evaluation.  max_exp_arg is
// the largest argument ever handed to std::exp; staying under ~700 means no
// overflow was possible at any point.
struct IntegralStats {
  double max_exp_arg = -std::numeric_limits<double>::infinity();
  int nodes = 0;
  int skipped = 0;
};

namespace detail {

inline double log_add_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

// log of the Gamma(shape/2, shape*scale/2) prior's normalizing constant.
inline double log_gamma_prior_const(double shape, double scale) {
  return 0.5 * shape * std::log(0.5 * shape * scale) -
         std::lgamma(0.5 * shape);
}

inline void track_exp(IntegralStats* stats, double arg) {
  if (stats && arg > stats->max_exp_arg) stats->max_exp_arg = arg;
}

}  // namespace detail

// Network-channel evidence with the loadings and their variance integrated
// out: log of
//   (2 pi sigma^2)^{-MP/2} exp(-sum_i ||Y_i||_F^2 / (2 sigma^2))
//   * C_prior * Integral_x  w(x) h(x) dx,   x = log tau_lambda^2,
// where h collects the per-subject Gaussian integrals
//   prod_i Integral N(lambda; 0, e^x I) exp(lambda'd_i/sigma^2 - ...) dlambda
// against the variance prior, evaluated by Gauss-Hermite quadrature in x.
// The e^{x^2/2} sqrt(2pi) factor un-weights the Hermite measure.
inline double log_marginal_network(std::span<const SymmetricNetwork> networks,
                                   const Eigen::MatrixXd& u, double sigma_sq,
                                   const Hyperparams& hyper,
                                   const QuadratureRule& rule,
                                   IntegralStats* stats = nullptr) {
  if (rule.kind != QuadratureKind::kGaussHermite1d) {
    throw ConfigurationError(
        "log_marginal_network: rule must be gauss-hermite-1d");
  }
  if (networks.empty()) throw DimensionError("log_marginal_network: no data");
  if (!(sigma_sq > 0.0)) {
    throw ParameterError("log_marginal_network: sigma_sq must be > 0");
  }
  const int n = networks.front().n();
  const int q = static_cast<int>(u.cols());
  if (u.rows() != n) {
    throw DimensionError("log_marginal_network: u rows != node count");
  }
  if ((u.transpose() * u - Eigen::MatrixXd::Identity(q, q))
          .cwiseAbs()
          .maxCoeff() > 1e-8) {
    throw ParameterError("log_marginal_network: u is not orthonormal");
  }

  const double m = static_cast<double>(networks.size());
  const double p = static_cast<double>(networks.front().n_pairs());
  const double qm = static_cast<double>(q) * m;
  const double la = -std::log(sigma_sq);  // log(1/sigma^2)

  double sum_y_sq = 0.0;
  double sum_d_sq = 0.0;
  for (const auto& net : networks) {
    const Eigen::MatrixXd& yd = net.dense();
    sum_y_sq += yd.squaredNorm();
    for (int l = 0; l < q; ++l) {
      const double dl = u.col(l).dot(yd * u.col(l));
      sum_d_sq += dl * dl;
    }
  }

  const double eta0 = hyper.eta0, tau0_sq = hyper.tau0_sq;

  // log integrand over x = log tau_lambda^2 (Jacobian already folded in).
  auto log_g = [&](double x) {
    // log(1/sigma^2 + e^{-x}) without forming either addend.
    const double log_denom = detail::log_add_exp(la, -x);
    const double data_arg = 2.0 * la - log_denom;  // (1/s^2)^2 / denom
    detail::track_exp(stats, data_arg);
    detail::track_exp(stats, -x);
    return -0.5 * x * (qm + eta0) - 0.5 * qm * log_denom +
           0.5 * sum_d_sq * std::exp(data_arg) -
           0.5 * eta0 * tau0_sq * std::exp(-x);
  };

  // The integrand in x is a skewed gamma-like bump (linear decay on the
  // right, double-exponential wall on the left), so raw Hermite nodes
  // converge slowly.  Center at the mode, scale by curvature, and tilt the
  // node map exponentially, x(t) = x* + s(e^{kt}-1)/k, with k chosen to
  // cancel the third log-derivative; the map is monotone for every k and
  // reduces the 16-node error on prior-dominated instances from ~1e-4 to
  // ~1e-8.
  double x_star = 0.0, best = -std::numeric_limits<double>::infinity();
  for (double x = -40.0; x <= 40.0; x += 0.5) {
    const double v = log_g(x);
    if (v > best) {
      best = v;
      x_star = x;
    }
  }
  {
    double lo = x_star - 0.5, hi = x_star + 0.5;
    while (hi - lo > 1e-10) {
      const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
      if (log_g(m1) < log_g(m2)) {
        lo = m1;
      } else {
        hi = m2;
      }
    }
    x_star = 0.5 * (lo + hi);
  }
  double scale = 1.0, kappa = 0.0;
  {
    const double fd = 1e-4;
    const double g0 = log_g(x_star);
    double curv = (log_g(x_star - fd) - 2.0 * g0 + log_g(x_star + fd)) /
                  (fd * fd);
    if (curv < 0.0) {
      // Re-estimate both derivatives at a step proportional to the bump
      // width; the wider stencil keeps the third difference out of
      // cancellation noise.
      const double h = 0.05 / std::sqrt(-curv);
      curv = (log_g(x_star - h) - 2.0 * g0 + log_g(x_star + h)) / (h * h);
      if (curv < 0.0) {
        scale = 1.0 / std::sqrt(-curv);
        const double third = (log_g(x_star + 2.0 * h) - 2.0 * log_g(x_star + h) +
                              2.0 * log_g(x_star - h) - log_g(x_star - 2.0 * h)) /
                             (2.0 * h * h * h);
        kappa = std::clamp(third * scale * scale * scale / 3.0, -2.0, 2.0);
      }
    }
  }

  const int nodes = static_cast<int>(rule.weights.size());
  if (stats) stats->nodes = nodes;
  std::vector<double> terms(static_cast<std::size_t>(nodes));
  for (int r = 0; r < nodes; ++r) {
    const double t = rule.nodes(r, 0);
    const double offset =
        std::abs(kappa) > 1e-12 ? scale * std::expm1(kappa * t) / kappa
                                : scale * t;
    // Un-weight the Hermite measure and apply the map's Jacobian s*e^{kt}.
    terms[static_cast<std::size_t>(r)] =
        std::log(rule.weights[r]) + std::log(scale) + kappa * t +
        0.5 * std::log(2.0 * M_PI) + 0.5 * t * t + log_g(x_star + offset);
  }
  const double mx = *std::max_element(terms.begin(), terms.end());
  if (!std::isfinite(mx)) {
    throw IntegrationError("log_marginal_network: no finite quadrature node");
  }
  double total = 0.0;
  for (double t : terms) {
    detail::track_exp(stats, t - mx);
    total += std::exp(t - mx);
  }

  return -0.5 * m * p * std::log(2.0 * M_PI * sigma_sq) -
         0.5 * sum_y_sq * std::exp(la) +
         detail::log_gamma_prior_const(eta0, tau0_sq) + mx + std::log(total);
}

// Clinical-channel normalizing constant A(lambda): the coefficients d are
// integrated analytically; the three variances go through the change of
// variables x_k = exp(-precision) onto (0,1)^3 and a sparse grid.  Sufficient
// statistics are accumulated in a canonical subject order so the value is
// bit-identical under subject permutation.
inline double log_A_lambda(const Eigen::MatrixXd& lambdas, const Dataset& data,
                           const Hyperparams& hyper,
                           const QuadratureRule& rule,
                           IntegralStats* stats = nullptr) {
  if (rule.kind != QuadratureKind::kSparseUniform3d) {
    throw ConfigurationError("log_A_lambda: rule must be sparse-uniform-3d");
  }
  const int m = data.n_subjects();
  if (lambdas.rows() != m) {
    throw DimensionError("log_A_lambda: lambda rows != subjects");
  }
  const int q = static_cast<int>(lambdas.cols());
  const int r = data.n_covariates();
  const int d = q + r;

  // Canonical order: sort subjects by (outcome, design row) so the rounding
  // of the sums cannot depend on input order.
  std::vector<int> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  Eigen::MatrixXd design(m, d);
  design.leftCols(q) = lambdas;
  design.rightCols(r) = data.covariates();
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (data.outcome(a) != data.outcome(b)) {
      return data.outcome(a) < data.outcome(b);
    }
    for (int j = 0; j < d; ++j) {
      if (design(a, j) != design(b, j)) return design(a, j) < design(b, j);
    }
    return false;
  });
  double sum_c_sq = 0.0;
  Eigen::VectorXd s = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
  for (int k = 0; k < m; ++k) {
    const int i = order[static_cast<std::size_t>(k)];
    const Eigen::VectorXd xi = design.row(i).transpose();
    sum_c_sq += data.outcome(i) * data.outcome(i);
    s += data.outcome(i) * xi;
    gram += xi * xi.transpose();
  }

  const double rho0 = hyper.rho0, psi0_sq = hyper.psi0_sq;
  const double omega0 = hyper.omega0, phi0_sq = hyper.phi0_sq;
  const double gamma0 = hyper.gamma0, kappa0_sq = hyper.kappa0_sq;

  const int nodes = static_cast<int>(rule.weights.size());
  if (stats) stats->nodes = nodes;
  std::vector<double> log_terms;
  std::vector<double> signs;
  log_terms.reserve(static_cast<std::size_t>(nodes));
  signs.reserve(static_cast<std::size_t>(nodes));
  int skipped = 0;
  Eigen::MatrixXd prec(d, d);
  for (int t = 0; t < nodes; ++t) {
    const double x1 = rule.nodes(t, 0), x2 = rule.nodes(t, 1),
                 x3 = rule.nodes(t, 2);
    const double p1 = -std::log(x1);  // 1/tau^2
    const double p2 = -std::log(x2);  // 1/tau_alpha^2
    const double p3 = -std::log(x3);  // 1/tau_beta^2

    prec = p1 * gram;
    prec.diagonal().head(q).array() += p3;
    prec.diagonal().tail(r).array() += p2;
    Eigen::LLT<Eigen::MatrixXd> llt(prec);
    if (llt.info() != Eigen::Success) {
      ++skipped;
      continue;
    }
    double log_det = 0.0;
    for (int j = 0; j < d; ++j) {
      log_det += 2.0 * std::log(llt.matrixL()(j, j));
    }
    const double quad = s.dot(llt.solve(s));

    const double lt =
        (0.5 * (m + rho0) - 1.0) * std::log(p1) +
        (0.5 * (r + omega0) - 1.0) * std::log(p2) +
        (0.5 * (q + gamma0) - 1.0) * std::log(p3) +
        (0.5 * (rho0 * psi0_sq + sum_c_sq) - 1.0) * std::log(x1) +
        (0.5 * omega0 * phi0_sq - 1.0) * std::log(x2) +
        (0.5 * gamma0 * kappa0_sq - 1.0) * std::log(x3) +
        0.5 * p1 * p1 * quad - 0.5 * log_det;
    if (!std::isfinite(lt)) {
      ++skipped;
      continue;
    }
    log_terms.push_back(std::log(std::abs(rule.weights[t])) + lt);
    signs.push_back(rule.weights[t] < 0.0 ? -1.0 : 1.0);
  }
  if (stats) stats->skipped = skipped;
  if (log_terms.empty() ||
      static_cast<double>(skipped) > 0.01 * static_cast<double>(nodes)) {
    throw IntegrationError("log_A_lambda: too many degenerate nodes (" +
                           std::to_string(skipped) + " of " +
                           std::to_string(nodes) + ")");
  }

  const double mx = *std::max_element(log_terms.begin(), log_terms.end());
  if (!std::isfinite(mx)) {
    throw IntegrationError("log_A_lambda: no finite quadrature node");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < log_terms.size(); ++i) {
    detail::track_exp(stats, log_terms[i] - mx);
    total += signs[i] * std::exp(log_terms[i] - mx);
  }
  if (!(total > 0.0)) {
    throw IntegrationError("log_A_lambda: quadrature mass is not positive");
  }

  return -0.5 * m * std::log(2.0 * M_PI) +
         detail::log_gamma_prior_const(rho0, psi0_sq) +
         detail::log_gamma_prior_const(omega0, phi0_sq) +
         detail::log_gamma_prior_const(gamma0, kappa0_sq) + mx +
         std::log(total);
}

// Independent-MH correction: accept the candidate with probability
// min{1, exp(log A(candidate) - log A(current))}.  Exactly one uniform is
// consumed per call.
inline bool imh_accept(double log_a_proposed, double log_a_current,
                       RngStream& rng) {
  if (std::isnan(log_a_proposed) || !std::isfinite(log_a_current)) {
    throw ParameterError("imh_accept: undefined acceptance ratio");
  }
  const double u = rng.uniform();
  return std::log(u) < log_a_proposed - log_a_current;
}

}  // namespace bsnmani
