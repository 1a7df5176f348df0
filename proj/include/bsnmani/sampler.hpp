#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bsnmani/data.hpp"
#include "bsnmani/errors.hpp"
#include "bsnmani/gibbs.hpp"
#include "bsnmani/mala.hpp"
#include "bsnmani/model.hpp"
#include "bsnmani/rng.hpp"
#include "bsnmani/stiefel.hpp"
#include "bsnmani/symmetric_network.hpp"

namespace bsnmani {

struct SamplerConfig {
  int iters = 5000;
  int burn_in = 2500;
  int thin = 1;
  std::uint64_t seed = 0;
  int q = 2;
  MalaConfig mala;
  Hyperparams hyper;

  void validate() const {
    if (iters < 1) throw ConfigurationError("SamplerConfig: iters must be >= 1");
    if (burn_in < 0 || burn_in >= iters) {
      throw ConfigurationError("SamplerConfig: need 0 <= burn_in < iters");
    }
    if (thin < 1) throw ConfigurationError("SamplerConfig: thin must be >= 1");
    if (q < 1) throw ConfigurationError("SamplerConfig: q must be >= 1");
    mala.validate();
    hyper.validate();
  }

  int n_draws() const { return (iters - burn_in) / thin; }
};

// Thinned post-burn-in chain snapshots plus whole-run diagnostics traces.
struct PosteriorDraws {
  std::vector<Eigen::MatrixXd> u;        // N x q, orthonormal columns
  std::vector<Eigen::MatrixXd> lambdas;  // M x q
  std::vector<Eigen::VectorXd> beta;     // q
  std::vector<Eigen::VectorXd> alpha;    // r
  std::vector<double> sigma_sq;
  std::vector<double> tau_sq;
  std::vector<double> tau_lambda_sq;
  std::vector<double> tau_beta_sq;
  std::vector<double> tau_alpha_sq;

  // Per-iteration traces over the full run (burn-in included).
  std::vector<double> step_size;
  std::vector<int> accepted;
  std::vector<double> log_joint_trace;

  // Two-stage correction diagnostics (NaN / untouched for the joint sampler).
  double imh_acceptance_rate = std::numeric_limits<double>::quiet_NaN();
  int integration_skips = 0;

  // Optional per-draw integrated network evidence, filled by the stage-one
  // runner when given a monitor rule; purely diagnostic.
  std::vector<double> marginal_monitor;

  int n_draws() const { return static_cast<int>(sigma_sq.size()); }

  void push_state(const ModelState& state) {
    u.push_back(state.u());
    lambdas.push_back(state.lambdas);
    beta.push_back(state.beta);
    alpha.push_back(state.alpha);
    sigma_sq.push_back(state.sigma_sq);
    tau_sq.push_back(state.tau_sq);
    tau_lambda_sq.push_back(state.tau_lambda_sq);
    tau_beta_sq.push_back(state.tau_beta_sq);
    tau_alpha_sq.push_back(state.tau_alpha_sq);
  }
};

namespace detail {

// Sign convention for eigenvector columns: first entry of non-negligible
// magnitude is made positive, so spectra with distinct eigenvalues
// initialize identically across runs and platforms.
inline void canonicalize_column_signs(Eigen::MatrixXd& u) {
  for (Eigen::Index c = 0; c < u.cols(); ++c) {
    const double scale = u.col(c).cwiseAbs().maxCoeff();
    for (Eigen::Index r = 0; r < u.rows(); ++r) {
      if (std::abs(u(r, c)) > 1e-12 * scale) {
        if (u(r, c) < 0.0) u.col(c) = -u.col(c);
        break;
      }
    }
  }
}

}  // namespace detail

// Spectral initialization from the networks alone: U0 = top-q eigenvectors
// of the subject-mean network, X0 = U0, lambda_i0 = diag(U0' Y_i U0),
// sigma^2_0 = pooled strict-lower residual variance (floored), remaining
// variances 1.  Never reads outcomes or covariates.
inline ModelState init_network_state(std::span<const SymmetricNetwork> networks,
                                     int q, int n_covariates) {
  if (networks.empty()) throw ConfigurationError("init: no subjects");
  const int n = networks.front().n();
  const int m = static_cast<int>(networks.size());
  if (q > n) throw ConfigurationError("init: q exceeds node count");
  if (m < q + 1) throw ConfigurationError("init: need at least q+1 subjects");

  Eigen::MatrixXd mean_net = Eigen::MatrixXd::Zero(n, n);
  for (const auto& y : networks) mean_net += y.dense();
  mean_net /= static_cast<double>(m);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mean_net);
  if (es.info() != Eigen::Success) {
    throw NumericalError("init: eigendecomposition failed");
  }
  // Eigen sorts ascending; take the top q by algebraic value, descending.
  Eigen::MatrixXd u0(n, q);
  for (int l = 0; l < q; ++l) u0.col(l) = es.eigenvectors().col(n - 1 - l);
  detail::canonicalize_column_signs(u0);

  Eigen::MatrixXd lambdas(m, q);
  for (int i = 0; i < m; ++i) {
    const auto& yd = networks[static_cast<std::size_t>(i)].dense();
    for (int l = 0; l < q; ++l) {
      lambdas(i, l) = u0.col(l).dot(yd * u0.col(l));
    }
  }

  double ss = 0.0;
  for (int i = 0; i < m; ++i) {
    ss += network_residual_ss(networks[static_cast<std::size_t>(i)], u0,
                              lambdas.row(i).transpose());
  }
  const double pooled =
      ss / (static_cast<double>(m) *
            static_cast<double>(networks.front().n_pairs()));
  const double sigma_sq0 = std::max(pooled, 1e-8);

  return ModelState(u0, std::move(lambdas), sigma_sq0,
                    Eigen::VectorXd::Zero(q),
                    Eigen::VectorXd::Zero(n_covariates), 1.0, 1.0, 1.0, 1.0);
}

// Full initialization: the network part above plus alpha0 = least squares of
// the outcome on the covariates alone (beta0 stays 0).
inline ModelState init_state(const Dataset& data, const SamplerConfig& config) {
  config.validate();
  ModelState state =
      init_network_state(data.networks(), config.q, data.n_covariates());
  if (data.n_covariates() > 0) {
    state.alpha = data.covariates().colPivHouseholderQr().solve(data.outcomes());
  }
  return state;
}

namespace detail {

// Shared MALA-within-Gibbs driver.  `sweep(state, rng)` runs the conjugate
// block; the Stiefel factor then moves by MALA against the network trace
// target, and `log_density(state)` feeds the diagnostics trace.
template <typename Sweep, typename LogDensity>
PosteriorDraws run_chain(std::span<const SymmetricNetwork> networks,
                         const SamplerConfig& config, ModelState state,
                         Sweep&& sweep, LogDensity&& log_density) {
  RngStream rng(config.seed);
  double omega = config.mala.resolved_omega0(state.n(), state.q());

  PosteriorDraws draws;
  draws.step_size.reserve(static_cast<std::size_t>(config.iters));
  int window_accepts = 0;
  int window_size = 0;

  for (int k = 1; k <= config.iters; ++k) {
    sweep(state, rng);

    XTarget target(networks, state.lambdas, state.sigma_sq);
    auto vg = [&](const Eigen::MatrixXd& x) { return target.value_and_grad(x); };
    MalaResult res = mala_step(state.x(), omega, vg, rng);
    if (res.accepted) state.set_x(std::move(res.x));
    window_accepts += res.accepted ? 1 : 0;
    window_size += 1;

    if (k <= config.burn_in && window_size == config.mala.k0) {
      omega = adapt_step(omega, window_accepts, window_size, config.mala);
      window_accepts = 0;
      window_size = 0;
    }

    draws.step_size.push_back(omega);
    draws.accepted.push_back(res.accepted ? 1 : 0);
    const double lj = log_density(state);
    if (!std::isfinite(lj)) {
      throw NumericalError("sampler: non-finite log density at iteration " +
                           std::to_string(k));
    }
    draws.log_joint_trace.push_back(lj);

    if (k > config.burn_in && (k - config.burn_in) % config.thin == 0) {
      draws.push_state(state);
    }
  }
  return draws;
}

}  // namespace detail

// Algorithm: per iteration, one full conjugate sweep over
// (lambda, d, variances), one MALA move of X, U = polar factor of X, and
// step-size adaptation on a fixed window during burn-in only.
inline PosteriorDraws run_joint(const Dataset& data,
                                const SamplerConfig& config) {
  config.validate();
  if (data.n_subjects() < 2) {
    throw ConfigurationError("run_joint: need at least two subjects");
  }
  ModelState state = init_state(data, config);
  return detail::run_chain(
      data.networks(), config, std::move(state),
      [&](ModelState& s, RngStream& r) {
        gibbs_sweep_joint(s, data, config.hyper, r);
      },
      [&](const ModelState& s) { return log_joint(s, data, config.hyper); });
}

namespace detail {

// Best signed matching of u's columns onto ref's: permutation sigma and signs
// maximizing sum_l |ref_l . u_sigma(l)|.  Exhaustive for small q, greedy
// beyond (alignment is cosmetic, not load-bearing, at high rank).
struct ColumnMatch {
  std::vector<int> perm;
  std::vector<double> sign;
};

inline ColumnMatch match_columns(const Eigen::MatrixXd& ref,
                                 const Eigen::MatrixXd& u) {
  const int q = static_cast<int>(ref.cols());
  Eigen::MatrixXd score = ref.transpose() * u;  // score(l, c) = ref_l . u_c
  ColumnMatch best;
  best.perm.resize(q);
  best.sign.assign(q, 1.0);

  if (q <= 6) {
    std::vector<int> perm(q);
    std::iota(perm.begin(), perm.end(), 0);
    double best_total = -1.0;
    std::vector<int> cur = perm;
    do {
      double total = 0.0;
      for (int l = 0; l < q; ++l) total += std::abs(score(l, cur[l]));
      if (total > best_total) {
        best_total = total;
        best.perm = cur;
      }
    } while (std::next_permutation(cur.begin(), cur.end()));
  } else {
    std::vector<bool> used(q, false);
    for (int l = 0; l < q; ++l) {
      int pick = -1;
      double top = -1.0;
      for (int c = 0; c < q; ++c) {
        if (!used[c] && std::abs(score(l, c)) > top) {
          top = std::abs(score(l, c));
          pick = c;
        }
      }
      used[pick] = true;
      best.perm[l] = pick;
    }
  }
  for (int l = 0; l < q; ++l) {
    best.sign[l] = score(l, best.perm[l]) < 0.0 ? -1.0 : 1.0;
  }
  return best;
}

}  // namespace detail

// Resolves the column permutation/sign symmetry against a reference frame.
// Signs apply to U columns only: u_l u_l' is sign-free, so lambda and beta
// follow the permutation unsigned and every fitted mean is bit-preserved.
inline void align_draws(PosteriorDraws& draws, const Eigen::MatrixXd& ref_u) {
  const int q = static_cast<int>(ref_u.cols());
  for (std::size_t t = 0; t < draws.u.size(); ++t) {
    const auto match = detail::match_columns(ref_u, draws.u[t]);
    Eigen::MatrixXd u_new(draws.u[t].rows(), q);
    Eigen::MatrixXd lam_new(draws.lambdas[t].rows(), q);
    Eigen::VectorXd beta_new(q);
    for (int l = 0; l < q; ++l) {
      u_new.col(l) = match.sign[l] * draws.u[t].col(match.perm[l]);
      lam_new.col(l) = draws.lambdas[t].col(match.perm[l]);
      beta_new[l] = draws.beta[t][match.perm[l]];
    }
    draws.u[t] = std::move(u_new);
    draws.lambdas[t] = std::move(lam_new);
    draws.beta[t] = std::move(beta_new);
  }
}

inline void align_draws(PosteriorDraws& draws) {
  if (draws.u.empty()) throw DimensionError("align_draws: no draws");
  const Eigen::MatrixXd ref = draws.u.front();
  align_draws(draws, ref);
}

}  // namespace bsnmani
