#pragma once

#include <cmath>
#include <span>

#include <Eigen/Dense>

#include "bsnmani/data.hpp"
#include "bsnmani/errors.hpp"
#include "bsnmani/model.hpp"
#include "bsnmani/rng.hpp"
#include "bsnmani/symmetric_network.hpp"

namespace bsnmani {

// A Gaussian full conditional in natural form: N(H^{-1} b, H^{-1}) stored as
// (precision H, natural parameter b).
struct GaussianConditional {
  Eigen::MatrixXd precision;
  Eigen::VectorXd natural;

  Eigen::VectorXd mean() const {
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("GaussianConditional: precision is not SPD");
    }
    return llt.solve(natural);
  }

  Eigen::VectorXd draw(RngStream& rng) const {
    return rng.mvn_from_precision(mean(), precision);
  }
};

// lambda_i's conditional from the network channel plus its prior, under the
// trace expansion ||Y - U diag(l) U'||^2 = ||Y||^2 - 2 l'diag(U'YU) + |l|^2
// (orthonormal U makes the Gram term the identity):
//   precision = (1/sigma^2 + 1/tau_lambda^2) I,
//   natural   = (1/sigma^2) diag(U'YU).
inline GaussianConditional lambda_network_conditional(const SymmetricNetwork& y,
                                                      const Eigen::MatrixXd& u,
                                                      double sigma_sq,
                                                      double tau_lambda_sq) {
  if (u.rows() != y.n()) {
    throw DimensionError("lambda_network_conditional: u rows != network size");
  }
  if (!(sigma_sq > 0.0) || !(tau_lambda_sq > 0.0)) {
    throw ParameterError("lambda_network_conditional: variances must be > 0");
  }
  const int q = static_cast<int>(u.cols());
  GaussianConditional out;
  out.precision = (1.0 / sigma_sq + 1.0 / tau_lambda_sq) *
                  Eigen::MatrixXd::Identity(q, q);
  out.natural.resize(q);
  const Eigen::MatrixXd& yd = y.dense();
  for (int l = 0; l < q; ++l) {
    out.natural[l] = u.col(l).dot(yd * u.col(l)) / sigma_sq;
  }
  return out;
}

// Joint-model conditional: the network term above plus the clinical channel,
// which contributes rank-one precision bb'/tau^2 and natural parameter
// (C_i - alpha'z_i) b / tau^2.
inline GaussianConditional lambda_joint_conditional(const ModelState& state,
                                                    const Dataset& data,
                                                    int i) {
  GaussianConditional out =
      lambda_network_conditional(data.network(i), state.u(), state.sigma_sq,
                                 state.tau_lambda_sq);
  const double resid = data.outcome(i) - state.alpha.dot(data.covariate_row(i));
  out.precision += (state.beta * state.beta.transpose()) / state.tau_sq;
  out.natural += (resid / state.tau_sq) * state.beta;
  return out;
}

// Draws lambda_i from the joint conditional and writes it into the state.
inline Eigen::VectorXd update_lambda_joint(int i, ModelState& state,
                                           const Dataset& data,
                                           RngStream& rng) {
  const Eigen::VectorXd lam = lambda_joint_conditional(state, data, i).draw(rng);
  state.lambdas.row(i) = lam.transpose();
  return lam;
}

// Draws lambda_i using the network channel only (stage 1 / prediction).
inline Eigen::VectorXd update_lambda_network_only(
    int i, ModelState& state, std::span<const SymmetricNetwork> networks,
    RngStream& rng) {
  const Eigen::VectorXd lam =
      lambda_network_conditional(networks[static_cast<std::size_t>(i)],
                                 state.u(), state.sigma_sq,
                                 state.tau_lambda_sq)
          .draw(rng);
  state.lambdas.row(i) = lam.transpose();
  return lam;
}

// Conditional of the stacked coefficients d = [beta; alpha] with design rows
// x_i = [lambda_i; z_i] and prior d ~ N(0, blockdiag(tau_beta^2 I, tau_alpha^2 I)):
//   precision = W^{-1} + (1/tau^2) sum_i x_i x_i',
//   natural   = (1/tau^2) sum_i C_i x_i.
inline GaussianConditional coeffs_conditional(const ModelState& state,
                                              const Dataset& data) {
  const int q = state.q();
  const int r = static_cast<int>(state.alpha.size());
  const int m = data.n_subjects();
  const int d = q + r;
  GaussianConditional out;
  out.precision = Eigen::MatrixXd::Zero(d, d);
  out.precision.topLeftCorner(q, q).diagonal().setConstant(
      1.0 / state.tau_beta_sq);
  out.precision.bottomRightCorner(r, r).diagonal().setConstant(
      1.0 / state.tau_alpha_sq);
  out.natural = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd x(d);
  for (int i = 0; i < m; ++i) {
    x.head(q) = state.lambdas.row(i).transpose();
    x.tail(r) = data.covariate_row(i);
    out.precision += (x * x.transpose()) / state.tau_sq;
    out.natural += (data.outcome(i) / state.tau_sq) * x;
  }
  return out;
}

// Draws d = [beta; alpha] and writes both blocks into the state.
inline Eigen::VectorXd update_coeffs(ModelState& state, const Dataset& data,
                                     RngStream& rng) {
  const Eigen::VectorXd d = coeffs_conditional(state, data).draw(rng);
  const int q = state.q();
  state.beta = d.head(q);
  state.alpha = d.tail(d.size() - q);
  return d;
}

// Conditional of a variance v whose precision carries a Gamma(shape0/2,
// shape0*scale0/2) prior against `count` Gaussian residuals with total sum of
// squares `ss`: 1/v ~ Gamma((shape0 + count)/2, (shape0*scale0 + ss)/2).
struct GammaParams {
  double shape;
  double rate;

  double mean() const { return shape / rate; }
};

inline GammaParams variance_conditional(double shape0, double scale0,
                                        double count, double ss) {
  if (!(shape0 > 0.0) || !(scale0 > 0.0) || count < 0.0 || ss < 0.0) {
    throw ParameterError("variance_conditional: domain violation");
  }
  return {0.5 * (shape0 + count), 0.5 * (shape0 * scale0 + ss)};
}

inline double draw_variance(const GammaParams& g, RngStream& rng) {
  const double prec = rng.gamma(g.shape, g.rate);
  if (!(prec > 0.0) || !std::isfinite(prec)) {
    throw NumericalError("draw_variance: degenerate precision draw");
  }
  return 1.0 / prec;
}

// sigma^2 | - against all M*N(N-1)/2 strict-lower residuals.
inline double update_sigma_sq(ModelState& state,
                              std::span<const SymmetricNetwork> networks,
                              const Hyperparams& hyper, RngStream& rng) {
  double ss = 0.0;
  for (std::size_t i = 0; i < networks.size(); ++i) {
    ss += network_residual_ss(
        networks[i], state.u(),
        state.lambdas.row(static_cast<Eigen::Index>(i)).transpose());
  }
  const double count =
      static_cast<double>(networks.size()) *
      static_cast<double>(networks.empty() ? 0 : networks.front().n_pairs());
  state.sigma_sq =
      draw_variance(variance_conditional(hyper.nu0, hyper.sigma0_sq, count, ss),
                    rng);
  return state.sigma_sq;
}

// tau^2 | - against the M clinical residuals.
inline double update_tau_sq(ModelState& state, const Dataset& data,
                            const Hyperparams& hyper, RngStream& rng) {
  double ss = 0.0;
  for (int i = 0; i < data.n_subjects(); ++i) {
    const double resid = data.outcome(i) -
                         state.beta.dot(state.lambdas.row(i).transpose()) -
                         state.alpha.dot(data.covariate_row(i));
    ss += resid * resid;
  }
  state.tau_sq = draw_variance(
      variance_conditional(hyper.rho0, hyper.psi0_sq,
                           static_cast<double>(data.n_subjects()), ss),
      rng);
  return state.tau_sq;
}

// tau_lambda^2 | - against all M*q loadings.
inline double update_tau_lambda_sq(ModelState& state, const Hyperparams& hyper,
                                   RngStream& rng) {
  const double ss = state.lambdas.squaredNorm();
  const double count = static_cast<double>(state.lambdas.size());
  state.tau_lambda_sq = draw_variance(
      variance_conditional(hyper.eta0, hyper.tau0_sq, count, ss), rng);
  return state.tau_lambda_sq;
}

// tau_beta^2 | - against the q regression coefficients.
inline double update_tau_beta_sq(ModelState& state, const Hyperparams& hyper,
                                 RngStream& rng) {
  state.tau_beta_sq = draw_variance(
      variance_conditional(hyper.gamma0, hyper.kappa0_sq,
                           static_cast<double>(state.beta.size()),
                           state.beta.squaredNorm()),
      rng);
  return state.tau_beta_sq;
}

// tau_alpha^2 | - against the r covariate coefficients.
inline double update_tau_alpha_sq(ModelState& state, const Hyperparams& hyper,
                                  RngStream& rng) {
  state.tau_alpha_sq = draw_variance(
      variance_conditional(hyper.omega0, hyper.phi0_sq,
                           static_cast<double>(state.alpha.size()),
                           state.alpha.squaredNorm()),
      rng);
  return state.tau_alpha_sq;
}

// One full conjugate sweep of the joint sampler, in fixed order:
// lambda_1..lambda_M, d, sigma^2, tau^2, tau_lambda^2, tau_beta^2,
// tau_alpha^2.  (The Stiefel factor moves separately via MALA.)
inline void gibbs_sweep_joint(ModelState& state, const Dataset& data,
                              const Hyperparams& hyper, RngStream& rng) {
  for (int i = 0; i < data.n_subjects(); ++i) {
    update_lambda_joint(i, state, data, rng);
  }
  update_coeffs(state, data, rng);
  update_sigma_sq(state, data.networks(), hyper, rng);
  update_tau_sq(state, data, hyper, rng);
  update_tau_lambda_sq(state, hyper, rng);
  update_tau_beta_sq(state, hyper, rng);
  update_tau_alpha_sq(state, hyper, rng);
}

// Network-only sweep (stage 1): lambdas from the network conditional, then
// sigma^2 and tau_lambda^2.  Never touches outcomes or covariates.
inline void gibbs_sweep_network(ModelState& state,
                                std::span<const SymmetricNetwork> networks,
                                const Hyperparams& hyper, RngStream& rng) {
  for (std::size_t i = 0; i < networks.size(); ++i) {
    update_lambda_network_only(static_cast<int>(i), state, networks, rng);
  }
  update_sigma_sq(state, networks, hyper, rng);
  update_tau_lambda_sq(state, hyper, rng);
}

}  // namespace bsnmani
