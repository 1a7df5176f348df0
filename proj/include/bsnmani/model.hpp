#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bsnmani/data.hpp"
#include "bsnmani/errors.hpp"
#include "bsnmani/stiefel.hpp"
#include "bsnmani/symmetric_network.hpp"

namespace bsnmani {

// Prior hyperparameters.  Every precision 1/v carries a Gamma(shape/2,
// shape*scale/2) prior, i.e. prior mean 1/scale for the precision:
//   1/sigma^2      ~ Gamma(nu0/2,    nu0*sigma0_sq/2)
//   1/tau^2        ~ Gamma(rho0/2,   rho0*psi0_sq/2)
//   1/tau_lambda^2 ~ Gamma(eta0/2,   eta0*tau0_sq/2)
//   1/tau_beta^2   ~ Gamma(gamma0/2, gamma0*kappa0_sq/2)
//   1/tau_alpha^2  ~ Gamma(omega0/2, omega0*phi0_sq/2)
struct Hyperparams {
  double nu0 = 2.0;
  double sigma0_sq = 1.0;
  double eta0 = 2.0;
  double tau0_sq = 1.0;
  double gamma0 = 2.0;
  double kappa0_sq = 1.0;
  double omega0 = 2.0;
  double phi0_sq = 1.0;
  double rho0 = 2.0;
  double psi0_sq = 1.0;

  void validate() const {
    for (double v : {nu0, sigma0_sq, eta0, tau0_sq, gamma0, kappa0_sq, omega0,
                     phi0_sq, rho0, psi0_sq}) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw ParameterError("Hyperparams: all entries must be > 0");
      }
    }
  }
};

// Full parameter state of one chain.  The unconstrained factor x and its
// polar expansion u are kept in lockstep: u == polar_expand(x) always.
class ModelState {
 private:
  Eigen::MatrixXd x_;
  Eigen::MatrixXd u_;

 public:
  ModelState(Eigen::MatrixXd x, Eigen::MatrixXd lambdas, double sigma_sq,
             Eigen::VectorXd beta, Eigen::VectorXd alpha, double tau_sq,
             double tau_lambda_sq, double tau_beta_sq, double tau_alpha_sq)
      : x_(std::move(x)),
        u_(polar_expand(EuclideanPoint(x_)).matrix()),
        lambdas(std::move(lambdas)),
        sigma_sq(sigma_sq),
        beta(std::move(beta)),
        alpha(std::move(alpha)),
        tau_sq(tau_sq),
        tau_lambda_sq(tau_lambda_sq),
        tau_beta_sq(tau_beta_sq),
        tau_alpha_sq(tau_alpha_sq) {
    if (this->lambdas.cols() != x_.cols() ||
        this->beta.size() != x_.cols()) {
      throw DimensionError("ModelState: rank q disagrees across fields");
    }
    for (double v : {sigma_sq, tau_sq, tau_lambda_sq, tau_beta_sq,
                     tau_alpha_sq}) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw ParameterError("ModelState: variances must be > 0");
      }
    }
  }

  const Eigen::MatrixXd& x() const { return x_; }
  const Eigen::MatrixXd& u() const { return u_; }
  int n() const { return static_cast<int>(x_.rows()); }
  int q() const { return static_cast<int>(x_.cols()); }

  // Replaces the unconstrained factor and refreshes u = polar_expand(x).
  void set_x(Eigen::MatrixXd x) {
    EuclideanPoint p(std::move(x));
    u_ = polar_expand(p).matrix();
    x_ = p.matrix();
  }

  Eigen::MatrixXd lambdas;  // M x q subject loadings
  double sigma_sq;
  Eigen::VectorXd beta;   // q
  Eigen::VectorXd alpha;  // r
  double tau_sq;
  double tau_lambda_sq;
  double tau_beta_sq;
  double tau_alpha_sq;
};

// log InverseGamma(v; shape, rate) == log density of v when 1/v ~
// Gamma(shape, rate).
inline double inv_gamma_logpdf(double v, double shape, double rate) {
  if (!(v > 0.0) || !(shape > 0.0) || !(rate > 0.0)) {
    throw ParameterError("inv_gamma_logpdf: domain violation");
  }
  return shape * std::log(rate) - std::lgamma(shape) -
         (shape + 1.0) * std::log(v) - rate / v;
}

// log N(v; 0, var * I).
inline double normal_iso_logpdf(const Eigen::VectorXd& v, double var) {
  if (!(var > 0.0)) throw ParameterError("normal_iso_logpdf: var must be > 0");
  const double d = static_cast<double>(v.size());
  return -0.5 * d * std::log(2.0 * M_PI * var) - v.squaredNorm() / (2.0 * var);
}

// Sum of squares of the strict-lower residual y - tril(u diag(lambda) u^T).
inline double network_residual_ss(const SymmetricNetwork& y,
                                  const Eigen::MatrixXd& u,
                                  const Eigen::VectorXd& lambda) {
  const int n = y.n();
  const int q = static_cast<int>(u.cols());
  double ss = 0.0;
  for (int k = 0; k < n; ++k) {
    for (int j = k + 1; j < n; ++j) {
      double mean = 0.0;
      for (int l = 0; l < q; ++l) mean += u(j, l) * lambda[l] * u(k, l);
      const double r = y(j, k) - mean;
      ss += r * r;
    }
  }
  return ss;
}

// Gaussian log likelihood of one network's strict lower triangle:
// vecl(Y) ~ N(vecl(U diag(lambda) U^T), sigma_sq * I).
inline double network_loglik(const SymmetricNetwork& y, const Eigen::MatrixXd& u,
                             const Eigen::VectorXd& lambda, double sigma_sq) {
  if (u.rows() != y.n() || u.cols() != lambda.size()) {
    throw DimensionError("network_loglik: dimensions disagree");
  }
  if (!(sigma_sq > 0.0)) {
    throw ParameterError("network_loglik: sigma_sq must be > 0");
  }
  const double p = static_cast<double>(y.n_pairs());
  return -0.5 * p * std::log(2.0 * M_PI * sigma_sq) -
         network_residual_ss(y, u, lambda) / (2.0 * sigma_sq);
}

// Gaussian log likelihood of one outcome: C ~ N(beta'lambda + alpha'z, tau^2).
inline double clinical_loglik(double c, const Eigen::VectorXd& z,
                              const Eigen::VectorXd& lambda,
                              const Eigen::VectorXd& beta,
                              const Eigen::VectorXd& alpha, double tau_sq) {
  if (lambda.size() != beta.size() || z.size() != alpha.size()) {
    throw DimensionError("clinical_loglik: dimensions disagree");
  }
  if (!(tau_sq > 0.0)) {
    throw ParameterError("clinical_loglik: tau_sq must be > 0");
  }
  const double resid = c - beta.dot(lambda) - alpha.dot(z);
  return -0.5 * std::log(2.0 * M_PI * tau_sq) -
         resid * resid / (2.0 * tau_sq);
}

// Conditional target of the unconstrained Stiefel factor and its gradient.
// With U_X = X (X^T X)^{-1/2},
//   log pi(X | -) = -trace(X^T X)/2
//                   + (1/sigma^2) sum_i trace(Lambda_i U_X^T Y_i U_X) + const.
// The per-column weighted network sums S_l = sum_i lambda_il Y_i are cached
// at construction so repeated evaluations along a MALA step reuse them.
class XTarget {
 public:
  XTarget(std::span<const SymmetricNetwork> networks,
          const Eigen::MatrixXd& lambdas, double sigma_sq)
      : inv_sigma_sq_(1.0 / sigma_sq) {
    if (!(sigma_sq > 0.0)) throw ParameterError("XTarget: sigma_sq <= 0");
    if (networks.empty() && lambdas.rows() != 0) {
      throw DimensionError("XTarget: lambda rows without networks");
    }
    if (static_cast<Eigen::Index>(networks.size()) != lambdas.rows()) {
      throw DimensionError("XTarget: networks/lambdas disagree");
    }
    const int q = static_cast<int>(lambdas.cols());
    const int n = networks.empty() ? 0 : networks.front().n();
    weighted_.assign(static_cast<std::size_t>(q),
                     Eigen::MatrixXd::Zero(n, n));
    for (std::size_t i = 0; i < networks.size(); ++i) {
      const auto& y = networks[i].dense();
      for (int l = 0; l < q; ++l) {
        weighted_[static_cast<std::size_t>(l)] +=
            lambdas(static_cast<Eigen::Index>(i), l) * y;
      }
    }
  }

  // -inf on numerically rank-deficient x (callers treat that as reject).
  double log_at(const Eigen::MatrixXd& x) const {
    auto r = detail::gram_inv_sqrt(x);
    if (!r) return -std::numeric_limits<double>::infinity();
    const Eigen::MatrixXd u = x * (*r);
    return -0.5 * x.squaredNorm() + trace_term(u);
  }

  // Likelihood trace part alone, (1/sigma^2) sum_l u_l' S_l u_l.
  double trace_term(const Eigen::MatrixXd& u) const {
    double t = 0.0;
    for (std::size_t l = 0; l < weighted_.size(); ++l) {
      const auto col = u.col(static_cast<Eigen::Index>(l));
      t += col.dot(weighted_[l] * col);
    }
    return inv_sigma_sq_ * t;
  }

  // Value and gradient; nullopt when x is rank deficient.  The chain rule
  // through the polar factor solves the Sylvester equation
  // dW W^{1/2} + W^{1/2} dW = dS in the eigenbasis of S = X^T X.
  std::optional<std::pair<double, Eigen::MatrixXd>> value_and_grad(
      const Eigen::MatrixXd& x) const {
    const Eigen::MatrixXd s = x.transpose() * x;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    if (es.info() != Eigen::Success) return std::nullopt;
    const Eigen::VectorXd& d = es.eigenvalues();
    const double dmax = d[d.size() - 1];
    if (!(dmax > 0.0) || d[0] < 1e-12 * dmax) return std::nullopt;
    const Eigen::MatrixXd& v = es.eigenvectors();
    const Eigen::VectorXd sqrt_d = d.cwiseSqrt();
    const Eigen::MatrixXd r =
        v * sqrt_d.cwiseInverse().asDiagonal() * v.transpose();
    const Eigen::MatrixXd u = x * r;

    const double value = -0.5 * x.squaredNorm() + trace_term(u);

    // G = dT/dU = (2/sigma^2) [S_1 u_1, ..., S_q u_q].
    const int q = static_cast<int>(x.cols());
    Eigen::MatrixXd g(x.rows(), q);
    for (int l = 0; l < q; ++l) {
      g.col(l) = (2.0 * inv_sigma_sq_) *
                 (weighted_[static_cast<std::size_t>(l)] * u.col(l));
    }

    // B_hat = V' R G' X R V; M_hat_ij = B_hat_ij / (sqrt(d_i) + sqrt(d_j)).
    const Eigen::MatrixXd b_hat =
        v.transpose() * (r * (g.transpose() * x) * r) * v;
    Eigen::MatrixXd m_hat(q, q);
    for (int i = 0; i < q; ++i) {
      for (int j = 0; j < q; ++j) {
        m_hat(i, j) = b_hat(i, j) / (sqrt_d[i] + sqrt_d[j]);
      }
    }
    const Eigen::MatrixXd m = v * m_hat * v.transpose();
    const Eigen::MatrixXd grad = -x + g * r - x * (m + m.transpose());
    return std::make_pair(value, grad);
  }

 private:
  std::vector<Eigen::MatrixXd> weighted_;
  double inv_sigma_sq_;
};

// Throwing, spec'd entry points over XTarget.
inline double log_target_x(const EuclideanPoint& x, const ModelState& state,
                           const Dataset& data) {
  XTarget t(data.networks(), state.lambdas, state.sigma_sq);
  const double v = t.log_at(x.matrix());
  if (!std::isfinite(v)) throw SingularityError("log_target_x: degenerate x");
  return v;
}

inline Eigen::MatrixXd grad_log_target_x(const EuclideanPoint& x,
                                         const ModelState& state,
                                         const Dataset& data) {
  XTarget t(data.networks(), state.lambdas, state.sigma_sq);
  auto vg = t.value_and_grad(x.matrix());
  if (!vg) throw SingularityError("grad_log_target_x: degenerate x");
  return vg->second;
}

// Network-plus-loadings block of the joint density (the part a network-only
// chain targets): network likelihoods, lambda priors, sigma^2 and
// tau_lambda^2 priors.  The flat Stiefel prior contributes no term.  Takes
// the networks alone so callers that must not see clinical fields can prove
// it by construction.
inline double log_g1_kernel(const ModelState& state,
                            std::span<const SymmetricNetwork> networks,
                            const Hyperparams& hyper) {
  double lp = 0.0;
  for (std::size_t i = 0; i < networks.size(); ++i) {
    const auto idx = static_cast<Eigen::Index>(i);
    lp += network_loglik(networks[i], state.u(),
                         state.lambdas.row(idx).transpose(), state.sigma_sq);
    lp += normal_iso_logpdf(state.lambdas.row(idx).transpose(),
                            state.tau_lambda_sq);
  }
  lp += inv_gamma_logpdf(state.sigma_sq, hyper.nu0 / 2.0,
                         hyper.nu0 * hyper.sigma0_sq / 2.0);
  lp += inv_gamma_logpdf(state.tau_lambda_sq, hyper.eta0 / 2.0,
                         hyper.eta0 * hyper.tau0_sq / 2.0);
  return lp;
}

inline double log_g1_kernel(const ModelState& state, const Dataset& data,
                            const Hyperparams& hyper) {
  return log_g1_kernel(state, data.networks(), hyper);
}

// Clinical block: outcome likelihoods, coefficient priors, tau^2 /
// tau_beta^2 / tau_alpha^2 priors.
inline double log_g2_kernel(const ModelState& state, const Dataset& data,
                            const Hyperparams& hyper) {
  double lp = 0.0;
  for (int i = 0; i < data.n_subjects(); ++i) {
    lp += clinical_loglik(data.outcome(i), data.covariate_row(i),
                          state.lambdas.row(i).transpose(), state.beta,
                          state.alpha, state.tau_sq);
  }
  lp += normal_iso_logpdf(state.beta, state.tau_beta_sq);
  lp += normal_iso_logpdf(state.alpha, state.tau_alpha_sq);
  lp += inv_gamma_logpdf(state.tau_sq, hyper.rho0 / 2.0,
                         hyper.rho0 * hyper.psi0_sq / 2.0);
  lp += inv_gamma_logpdf(state.tau_beta_sq, hyper.gamma0 / 2.0,
                         hyper.gamma0 * hyper.kappa0_sq / 2.0);
  lp += inv_gamma_logpdf(state.tau_alpha_sq, hyper.omega0 / 2.0,
                         hyper.omega0 * hyper.phi0_sq / 2.0);
  return lp;
}

// Log of the full unnormalized posterior density.
inline double log_joint(const ModelState& state, const Dataset& data,
                        const Hyperparams& hyper) {
  if (state.lambdas.rows() != data.n_subjects() ||
      state.alpha.size() != data.n_covariates() ||
      state.n() != data.n_nodes()) {
    throw DimensionError("log_joint: state/data dimensions disagree");
  }
  return log_g1_kernel(state, data, hyper) + log_g2_kernel(state, data, hyper);
}

}  // namespace bsnmani
