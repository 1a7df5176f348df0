#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bsnmani/data.hpp"
#include "bsnmani/errors.hpp"
#include "bsnmani/gibbs.hpp"
#include "bsnmani/marginals.hpp"
#include "bsnmani/model.hpp"
#include "bsnmani/quadrature.hpp"
#include "bsnmani/rng.hpp"
#include "bsnmani/sampler.hpp"
#include "bsnmani/threads.hpp"
#include "bsnmani/symmetric_network.hpp"

namespace bsnmani {

// Stage 1: MALA-within-Gibbs on the network block alone (U, X, lambda,
// sigma^2, tau_lambda^2).  The signature takes only the networks, so the
// stage cannot read outcomes or covariates by construction.  If
// `marginal_monitor_rule` (gauss-hermite-1d) is given, the integrated network
// evidence at each thinned draw's (U, sigma^2) is recorded in
// draws.marginal_monitor as a diagnostic; it never influences the chain.
inline PosteriorDraws run_stage1(
    std::span<const SymmetricNetwork> networks, const SamplerConfig& config,
    const QuadratureRule* marginal_monitor_rule = nullptr) {
  config.validate();
  if (networks.size() < 2) {
    throw ConfigurationError("run_stage1: need at least two subjects");
  }
  ModelState state = init_network_state(networks, config.q, 0);
  PosteriorDraws draws = detail::run_chain(
      networks, config, std::move(state),
      [&](ModelState& s, RngStream& r) {
        gibbs_sweep_network(s, networks, config.hyper, r);
      },
      [&](const ModelState& s) {
        return log_g1_kernel(s, networks, config.hyper);
      });
  if (marginal_monitor_rule != nullptr) {
    draws.marginal_monitor.reserve(
        static_cast<std::size_t>(draws.n_draws()));
    for (int j = 0; j < draws.n_draws(); ++j) {
      draws.marginal_monitor.push_back(log_marginal_network(
          networks, draws.u[static_cast<std::size_t>(j)],
          draws.sigma_sq[static_cast<std::size_t>(j)], config.hyper,
          *marginal_monitor_rule));
    }
  }
  return draws;
}

inline PosteriorDraws run_stage1(
    const Dataset& data, const SamplerConfig& config,
    const QuadratureRule* marginal_monitor_rule = nullptr) {
  return run_stage1(data.networks(), config, marginal_monitor_rule);
}

// One clinical-block draw: everything stage 2 samples.
struct ClinicalDraw {
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha;
  double tau_sq = 1.0;
  double tau_beta_sq = 1.0;
  double tau_alpha_sq = 1.0;
};

// Stage 2: one short Gibbs scan (coefficients, tau^2, tau_beta^2,
// tau_alpha^2) per loading snapshot, treating the snapshot as fixed design
// data and carrying the clinical state across snapshots; emits exactly one
// draw per snapshot.
inline std::vector<ClinicalDraw> run_stage2(
    const std::vector<Eigen::MatrixXd>& lambda_snapshots, const Dataset& data,
    const SamplerConfig& config) {
  config.validate();
  if (lambda_snapshots.empty()) {
    throw ConfigurationError("run_stage2: no loading snapshots");
  }
  const int m = data.n_subjects();
  const int r = data.n_covariates();
  for (const auto& lam : lambda_snapshots) {
    if (lam.rows() != m || lam.cols() != config.q) {
      throw ConfigurationError(
          "run_stage2: snapshot shape disagrees with data/config");
    }
  }

  Eigen::VectorXd alpha0 = Eigen::VectorXd::Zero(r);
  if (r > 0) {
    alpha0 = data.covariates().colPivHouseholderQr().solve(data.outcomes());
  }
  // The Stiefel factor is inert in this block; a q x q identity keeps the
  // state valid without touching any network quantity.
  ModelState state(Eigen::MatrixXd::Identity(config.q, config.q),
                   lambda_snapshots.front(), 1.0,
                   Eigen::VectorXd::Zero(config.q), std::move(alpha0), 1.0,
                   1.0, 1.0, 1.0);

  RngStream rng(config.seed, 1);
  std::vector<ClinicalDraw> out;
  out.reserve(lambda_snapshots.size());
  for (const auto& lam : lambda_snapshots) {
    state.lambdas = lam;
    update_coeffs(state, data, rng);
    update_tau_sq(state, data, config.hyper, rng);
    update_tau_beta_sq(state, config.hyper, rng);
    update_tau_alpha_sq(state, config.hyper, rng);
    out.push_back({state.beta, state.alpha, state.tau_sq, state.tau_beta_sq,
                   state.tau_alpha_sq});
  }
  return out;
}

// Two-stage sampler: stage-1 network draws and paired stage-2 clinical draws
// form candidate full draws; an independent-MH step with ratio
// A(lambda*) / A(lambda_current) corrects the composition toward the joint
// posterior.  The j-th candidate pairs the j-th snapshots one-to-one.
// Rejected positions repeat the previous accepted draw, so the output length
// always equals the candidate count.  A(lambda) is evaluated once per
// candidate; failures of the 3-D integral skip the decision (the candidate
// is treated as rejected) and more than 5% such skips abort the run.
inline PosteriorDraws run_twostage(const Dataset& data,
                                   const SamplerConfig& config,
                                   const QuadratureRule& a_rule) {
  config.validate();
  if (data.n_subjects() < 2) {
    throw ConfigurationError("run_twostage: need at least two subjects");
  }
  if (a_rule.kind != QuadratureKind::kSparseUniform3d) {
    throw ConfigurationError("run_twostage: A(lambda) rule must be sparse-uniform-3d");
  }

  PosteriorDraws net = run_stage1(data.networks(), config);
  const std::vector<ClinicalDraw> clin =
      run_stage2(net.lambdas, data, config);
  const int n = net.n_draws();

  // A(lambda) is deterministic per candidate, so the integrals can be
  // evaluated in parallel into indexed slots before the (inherently
  // sequential) accept/reject pass; the uniform stream is untouched by the
  // evaluation order, keeping parallel runs byte-identical to serial ones.
  std::vector<double> log_a_all(static_cast<std::size_t>(n));
  std::vector<char> integrable(static_cast<std::size_t>(n), 0);
  parallel_for(n, [&](int j) {
    const auto js = static_cast<std::size_t>(j);
    try {
      log_a_all[js] = log_A_lambda(net.lambdas[js], data, config.hyper, a_rule);
      integrable[js] = 1;
    } catch (const IntegrationError&) {
      integrable[js] = 0;
    }
  });

  RngStream imh_rng(config.seed, 2);
  std::vector<int> emitted(static_cast<std::size_t>(n), -1);
  int current = -1;
  double log_a_current = std::numeric_limits<double>::quiet_NaN();
  int skips = 0, decisions = 0, accepted = 0;
  for (int j = 0; j < n; ++j) {
    if (!integrable[static_cast<std::size_t>(j)]) {
      ++skips;
      emitted[static_cast<std::size_t>(j)] = current;  // -1 while unseeded
      continue;
    }
    const double log_a = log_a_all[static_cast<std::size_t>(j)];
    if (current < 0) {
      // Chain initialization: the first integrable candidate is taken as-is
      // (no uniform consumed) and back-fills any earlier skipped positions.
      current = j;
      log_a_current = log_a;
      for (int k = 0; k <= j; ++k) emitted[static_cast<std::size_t>(k)] = j;
    } else {
      ++decisions;
      if (imh_accept(log_a, log_a_current, imh_rng)) {
        ++accepted;
        current = j;
        log_a_current = log_a;
      }
      emitted[static_cast<std::size_t>(j)] = current;
    }
  }
  if (current < 0) {
    throw IntegrationError("run_twostage: every candidate failed A(lambda)");
  }
  if (static_cast<double>(skips) > 0.05 * static_cast<double>(n)) {
    throw IntegrationError("run_twostage: " + std::to_string(skips) + " of " +
                           std::to_string(n) +
                           " candidates failed A(lambda) integration");
  }

  PosteriorDraws out;
  out.step_size = std::move(net.step_size);
  out.accepted = std::move(net.accepted);
  out.log_joint_trace = std::move(net.log_joint_trace);
  const auto un = static_cast<std::size_t>(n);
  out.u.reserve(un);
  out.lambdas.reserve(un);
  out.beta.reserve(un);
  out.alpha.reserve(un);
  out.sigma_sq.reserve(un);
  out.tau_sq.reserve(un);
  out.tau_lambda_sq.reserve(un);
  out.tau_beta_sq.reserve(un);
  out.tau_alpha_sq.reserve(un);
  for (int j = 0; j < n; ++j) {
    const auto c = static_cast<std::size_t>(emitted[static_cast<std::size_t>(j)]);
    out.u.push_back(net.u[c]);
    out.lambdas.push_back(net.lambdas[c]);
    out.sigma_sq.push_back(net.sigma_sq[c]);
    out.tau_lambda_sq.push_back(net.tau_lambda_sq[c]);
    out.beta.push_back(clin[c].beta);
    out.alpha.push_back(clin[c].alpha);
    out.tau_sq.push_back(clin[c].tau_sq);
    out.tau_beta_sq.push_back(clin[c].tau_beta_sq);
    out.tau_alpha_sq.push_back(clin[c].tau_alpha_sq);
  }
  out.integration_skips = skips;
  out.imh_acceptance_rate =
      decisions > 0 ? static_cast<double>(accepted) /
                          static_cast<double>(decisions)
                    : std::numeric_limits<double>::quiet_NaN();
  return out;
}

inline PosteriorDraws run_twostage(const Dataset& data,
                                   const SamplerConfig& config) {
  return run_twostage(data, config, sparse_uniform_3d(6));
}

}  // namespace bsnmani
