#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <utility>

#include <Eigen/Dense>

#include "bsnmani/errors.hpp"
#include "bsnmani/rng.hpp"

namespace bsnmani {

// Langevin-proposal tuning knobs.  omega0 == 0 means "resolve at run time to
// 0.01/sqrt(n*q)" (the scale-aware default); the step size actually used is
// always strictly positive.
struct MalaConfig {
  double omega0 = 0.0;
  double rho_target = 0.574;
  int k0 = 50;
  double shrink = 0.9;
  double grow = 1.1;

  void validate() const {
    if (!(omega0 >= 0.0) || !std::isfinite(omega0)) {
      throw ParameterError("MalaConfig: omega0 must be >= 0 (0 = auto)");
    }
    if (!(rho_target > 0.0) || !(rho_target < 1.0)) {
      throw ParameterError("MalaConfig: rho_target must lie in (0,1)");
    }
    if (k0 < 1) throw ParameterError("MalaConfig: k0 must be >= 1");
    if (!(shrink > 0.0) || !(shrink < 1.0) || !(grow > 1.0)) {
      throw ParameterError("MalaConfig: need 0 < shrink < 1 < grow");
    }
  }

  double resolved_omega0(int n, int q) const {
    return omega0 > 0.0 ? omega0
                        : 0.01 / std::sqrt(static_cast<double>(n) *
                                           static_cast<double>(q));
  }
};

// Targets are callables x -> optional<pair<log value, gradient>>, with
// nullopt marking states of zero density (auto-reject).

// log of the acceptance ratio for the move x -> prop:
//   log pi(prop) - log pi(x)
//   - ||x - prop - (w^2/2) grad(prop)||^2 / (2 w^2)
//   + ||prop - x - (w^2/2) grad(x)||^2 / (2 w^2).
// Returns -inf when the proposal has zero density; throws if x does.
template <typename ValueGrad>
double mala_log_accept_ratio(const Eigen::MatrixXd& x,
                             const Eigen::MatrixXd& prop, double omega,
                             ValueGrad&& vg) {
  if (!(omega > 0.0)) throw ParameterError("mala: omega must be > 0");
  const auto at_x = vg(x);
  if (!at_x || !std::isfinite(at_x->first)) {
    throw NumericalError("mala: current state has zero density");
  }
  const auto at_prop = vg(prop);
  if (!at_prop || !std::isfinite(at_prop->first)) {
    return -std::numeric_limits<double>::infinity();
  }
  const double half_w2 = 0.5 * omega * omega;
  const double fwd =
      (prop - x - half_w2 * at_x->second).squaredNorm() / (4.0 * half_w2);
  const double bwd =
      (x - prop - half_w2 * at_prop->second).squaredNorm() / (4.0 * half_w2);
  return at_prop->first - at_x->first - bwd + fwd;
}

struct MalaResult {
  Eigen::MatrixXd x;
  bool accepted = false;
};

// One Metropolis-adjusted Langevin transition.  Exactly one proposal draw
// and one uniform are consumed per call regardless of the decision, so
// accept/reject sequences are reproducible stream-for-stream.
template <typename ValueGrad>
MalaResult mala_step(const Eigen::MatrixXd& x, double omega, ValueGrad&& vg,
                     RngStream& rng) {
  if (!(omega > 0.0)) throw ParameterError("mala_step: omega must be > 0");
  const auto at_x = vg(x);
  if (!at_x || !std::isfinite(at_x->first)) {
    throw NumericalError("mala_step: current state has zero density");
  }
  const double half_w2 = 0.5 * omega * omega;
  const Eigen::MatrixXd noise = rng.matrix_normal_std(
      static_cast<int>(x.rows()), static_cast<int>(x.cols()));
  const Eigen::MatrixXd prop = x + half_w2 * at_x->second + omega * noise;
  const double u = rng.uniform();

  const auto at_prop = vg(prop);
  if (!at_prop || !std::isfinite(at_prop->first)) return {x, false};

  const double fwd = (omega * noise).squaredNorm() / (4.0 * half_w2);
  const double bwd =
      (x - prop - half_w2 * at_prop->second).squaredNorm() / (4.0 * half_w2);
  const double log_ratio = at_prop->first - at_x->first - bwd + fwd;
  if (std::log(u) < log_ratio) return {prop, true};
  return {x, false};
}

// Multiplicative step-size tuning on the window's empirical acceptance rate;
// the boundary (rate exactly on target) grows.
inline double adapt_step(double omega, int accepts_in_window, int window,
                         const MalaConfig& cfg) {
  if (window < 1) throw ParameterError("adapt_step: window must be >= 1");
  if (accepts_in_window < 0 || accepts_in_window > window) {
    throw ParameterError("adapt_step: accept count outside window");
  }
  const double rate =
      static_cast<double>(accepts_in_window) / static_cast<double>(window);
  return rate < cfg.rho_target ? omega * cfg.shrink : omega * cfg.grow;
}

}  // namespace bsnmani
