#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bsnmani/data.hpp"
#include "bsnmani/errors.hpp"
#include "bsnmani/gibbs.hpp"
#include "bsnmani/rng.hpp"
#include "bsnmani/sampler.hpp"
#include "bsnmani/simulate.hpp"
#include "bsnmani/symmetric_network.hpp"
#include "bsnmani/threads.hpp"
#include "bsnmani/twostage.hpp"

namespace bsnmani {

struct PredictConfig {
  std::uint64_t seed = 0;
  // When set, each predictive sample additionally receives outcome noise
  // N(0, tau_sq) from its posterior draw; point predictions never do.
  bool sample_noise = false;
};

struct Predictions {
  // Point prediction per test subject: the average over posterior draws of
  // the predictive mean beta' E[lambda* | Y*, draw] + alpha' z.  Free of
  // sampling noise, so it is exactly invariant under the signed-permutation
  // symmetry of the draws.
  Eigen::VectorXd point;
  // Full predictive samples, one row per posterior draw, with lambda* drawn
  // from its network conditional under that draw's (U, sigma^2, tau_lambda^2).
  Eigen::MatrixXd samples;
  // Per-subject standard deviation across predictive samples.
  Eigen::VectorXd sd;
};

inline Predictions predict(const PosteriorDraws& draws,
                           std::span<const SymmetricNetwork> networks,
                           const Eigen::MatrixXd& covariates,
                           const PredictConfig& config = {}) {
  const int k = draws.n_draws();
  if (k < 1) throw ConfigurationError("predict: no posterior draws");
  const auto n_test = static_cast<int>(networks.size());
  if (n_test < 1) throw DimensionError("predict: no test subjects");
  if (covariates.rows() != n_test) {
    throw DimensionError("predict: covariate rows != test network count");
  }
  const int n = static_cast<int>(draws.u.front().rows());
  for (const auto& y : networks) {
    if (y.n() != n) {
      throw DimensionError("predict: test network node count " +
                           std::to_string(y.n()) +
                           " != trained node count " + std::to_string(n));
    }
  }
  if (covariates.cols() != draws.alpha.front().size()) {
    throw DimensionError("predict: covariate width != trained alpha length");
  }

  RngStream rng(config.seed);
  Predictions out;
  out.point = Eigen::VectorXd::Zero(n_test);
  out.samples.resize(k, n_test);
  for (int j = 0; j < k; ++j) {
    const auto js = static_cast<std::size_t>(j);
    for (int i = 0; i < n_test; ++i) {
      const auto cond = lambda_network_conditional(
          networks[static_cast<std::size_t>(i)], draws.u[js],
          draws.sigma_sq[js], draws.tau_lambda_sq[js]);
      const double cov_term = draws.alpha[js].dot(covariates.row(i));
      out.point[i] += draws.beta[js].dot(cond.mean()) + cov_term;
      double sample = draws.beta[js].dot(cond.draw(rng)) + cov_term;
      if (config.sample_noise) sample += rng.normal(0.0, draws.tau_sq[js]);
      out.samples(j, i) = sample;
    }
  }
  out.point /= static_cast<double>(k);
  out.sd = Eigen::VectorXd::Zero(n_test);
  if (k > 1) {
    for (int i = 0; i < n_test; ++i) {
      const double mean = out.samples.col(i).mean();
      out.sd[i] = std::sqrt(
          (out.samples.col(i).array() - mean).square().sum() / (k - 1));
    }
  }
  return out;
}

inline Predictions predict(const PosteriorDraws& draws, const Dataset& data,
                           const PredictConfig& config = {}) {
  return predict(draws, data.networks(), data.covariates(), config);
}

// 1 - SSE / SST against the observed outcomes.
inline double predictive_r2(const Eigen::VectorXd& predictions,
                            const Eigen::VectorXd& truths) {
  if (predictions.size() != truths.size() || truths.size() < 2) {
    throw DimensionError("predictive_r2: need equal lengths >= 2");
  }
  const double mean = truths.mean();
  const double sst = (truths.array() - mean).square().sum();
  if (!(sst > 0.0)) {
    throw UndefinedMetricError("predictive_r2: outcomes have zero variance");
  }
  const double sse = (truths - predictions).squaredNorm();
  return 1.0 - sse / sst;
}

// Root-mean-square error of posterior means against the generating values.
// The caller aligns the draws (align_draws against truth.u_true) first; the
// metric itself is plain entrywise arithmetic.
struct ParamRmse {
  double u = 0.0;
  double lambda = 0.0;
  double d = 0.0;  // stacked [beta; alpha]
  double sigma_sq = 0.0;
  double tau_sq = 0.0;
};

inline ParamRmse param_rmse(const PosteriorDraws& draws,
                            const GroundTruth& truth) {
  const int k = draws.n_draws();
  if (k < 1) throw ConfigurationError("param_rmse: no posterior draws");
  const Eigen::MatrixXd& u_true = truth.u_true.matrix();
  if (draws.u.front().rows() != u_true.rows() ||
      draws.u.front().cols() != u_true.cols() ||
      draws.lambdas.front().rows() != truth.lambdas_true.rows() ||
      draws.beta.front().size() != truth.beta_true.size() ||
      draws.alpha.front().size() != truth.alpha_true.size()) {
    throw DimensionError("param_rmse: draw/truth shapes disagree");
  }

  Eigen::MatrixXd u_bar = Eigen::MatrixXd::Zero(u_true.rows(), u_true.cols());
  Eigen::MatrixXd lam_bar = Eigen::MatrixXd::Zero(truth.lambdas_true.rows(),
                                                  truth.lambdas_true.cols());
  Eigen::VectorXd beta_bar = Eigen::VectorXd::Zero(truth.beta_true.size());
  Eigen::VectorXd alpha_bar = Eigen::VectorXd::Zero(truth.alpha_true.size());
  double sig_bar = 0.0;
  double tau_bar = 0.0;
  for (int j = 0; j < k; ++j) {
    const auto js = static_cast<std::size_t>(j);
    u_bar += draws.u[js];
    lam_bar += draws.lambdas[js];
    beta_bar += draws.beta[js];
    alpha_bar += draws.alpha[js];
    sig_bar += draws.sigma_sq[js];
    tau_bar += draws.tau_sq[js];
  }
  const double kd = static_cast<double>(k);
  u_bar /= kd;
  lam_bar /= kd;
  beta_bar /= kd;
  alpha_bar /= kd;
  sig_bar /= kd;
  tau_bar /= kd;

  ParamRmse out;
  out.u = std::sqrt((u_bar - u_true).squaredNorm() /
                    static_cast<double>(u_true.size()));
  out.lambda = std::sqrt((lam_bar - truth.lambdas_true).squaredNorm() /
                         static_cast<double>(truth.lambdas_true.size()));
  Eigen::VectorXd d_bar(beta_bar.size() + alpha_bar.size());
  d_bar << beta_bar, alpha_bar;
  Eigen::VectorXd d_true(truth.beta_true.size() + truth.alpha_true.size());
  d_true << truth.beta_true, truth.alpha_true;
  out.d = std::sqrt((d_bar - d_true).squaredNorm() /
                    static_cast<double>(d_true.size()));
  out.sigma_sq = std::abs(sig_bar - truth.sigma_sq_true);
  out.tau_sq = std::abs(tau_bar - truth.tau_sq_true);
  return out;
}

// Frobenius distance between the column-span projectors: invariant to signed
// permutations and to any rotation within either span.
inline double subspace_distance(const Eigen::MatrixXd& u_a,
                                const Eigen::MatrixXd& u_b) {
  if (u_a.rows() != u_b.rows() || u_a.cols() != u_b.cols()) {
    throw DimensionError("subspace_distance: shapes disagree");
  }
  return (u_a * u_a.transpose() - u_b * u_b.transpose()).norm();
}

enum class SamplerKind { kJoint, kTwoStage };

struct CvRow {
  int repeat = 0;
  // Fold index, or -1 for the per-repeat row scored on the predictions
  // pooled across all folds of that repeat.
  int fold = 0;
  double r2 = 0.0;
  int n_test = 0;
};

struct CvResult {
  std::vector<CvRow> rows;
  double median = 0.0;
  double iqr = 0.0;
};

// Deterministic fold labels for positions 0..m-1: a pure function of
// (m, folds, seed), independent of the subjects stored at those positions.
inline std::vector<int> fold_assignments(int m, int folds, std::uint64_t seed) {
  if (folds < 2 || folds > m) {
    throw ConfigurationError("fold_assignments: need 2 <= folds <= subjects");
  }
  std::vector<int> order(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) order[static_cast<std::size_t>(i)] = i;
  RngStream rng(seed);
  for (int i = m - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform() * (i + 1));
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(std::min(j, i))]);
  }
  std::vector<int> fold(static_cast<std::size_t>(m));
  for (int pos = 0; pos < m; ++pos) {
    fold[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])] =
        pos % folds;
  }
  return fold;
}

namespace detail {

// Linear-interpolation quantile on a sorted copy (the common "type 7" rule).
inline double quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = p * (static_cast<double>(v.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = static_cast<std::size_t>(std::ceil(h));
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace detail

// Repeated k-fold cross-validation.  Each repeat gets its own deterministic
// partition; each (repeat, fold) fit and its predictions get their own seed
// derived from config.seed.  Per-fold rows are emitted for folds holding at
// least two test subjects (predictive R^2 is undefined below that); every
// repeat also emits a pooled row with fold = -1 scoring all of that repeat's
// held-out predictions together, which is the only per-repeat score under
// leave-one-out.  The summary median/IQR is taken over per-fold rows when
// any exist, otherwise over the pooled rows.
inline CvResult cross_validate(const Dataset& data, int folds, int repeats,
                               const SamplerConfig& config, SamplerKind kind) {
  const int m = data.n_subjects();
  if (folds < 2 || folds > m) {
    throw ConfigurationError("cross_validate: need 2 <= folds <= subjects");
  }
  if (repeats < 1) throw ConfigurationError("cross_validate: repeats >= 1");
  if (m - (m + folds - 1) / folds < 2) {
    throw ConfigurationError(
        "cross_validate: training folds need >= 2 subjects");
  }

  // Each (repeat, fold) task owns a seed derived from config.seed, so the
  // tasks are independent and safe to run in parallel; results are collected
  // by task index and assembled sequentially afterwards, which keeps the
  // output identical across worker counts.
  std::vector<std::vector<int>> assignments;
  assignments.reserve(static_cast<std::size_t>(repeats));
  for (int rep = 0; rep < repeats; ++rep) {
    assignments.push_back(fold_assignments(
        m, folds, config.seed + 503ull * static_cast<std::uint64_t>(rep + 1)));
  }
  const int n_tasks = repeats * folds;
  std::vector<Eigen::VectorXd> task_pred(static_cast<std::size_t>(n_tasks));
  std::vector<Eigen::VectorXd> task_truth(static_cast<std::size_t>(n_tasks));
  parallel_for(n_tasks, [&](int t) {
    const int rep = t / folds;
    const int f = t % folds;
    const auto& assignment = assignments[static_cast<std::size_t>(rep)];
    std::vector<int> train;
    std::vector<int> test;
    for (int i = 0; i < m; ++i) {
      (assignment[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
    }
    const Dataset train_data = data.subset(train);
    const Dataset test_data = data.subset(test);

    SamplerConfig fit_cfg = config;
    fit_cfg.seed = config.seed + 7919ull * static_cast<std::uint64_t>(rep + 1) +
                   104729ull * static_cast<std::uint64_t>(f + 1);
    const PosteriorDraws draws = kind == SamplerKind::kJoint
                                     ? run_joint(train_data, fit_cfg)
                                     : run_twostage(train_data, fit_cfg);
    PredictConfig pred_cfg;
    pred_cfg.seed = fit_cfg.seed + 1;
    const auto ts = static_cast<std::size_t>(t);
    task_pred[ts] = predict(draws, test_data, pred_cfg).point;
    task_truth[ts] = test_data.outcomes();
  });

  CvResult out;
  std::vector<double> fold_scores;
  std::vector<double> pooled_scores;
  for (int rep = 0; rep < repeats; ++rep) {
    Eigen::VectorXd pooled_pred(m);
    Eigen::VectorXd pooled_truth(m);
    int pooled_at = 0;
    for (int f = 0; f < folds; ++f) {
      const auto ts = static_cast<std::size_t>(rep * folds + f);
      const int n_test = static_cast<int>(task_pred[ts].size());
      pooled_pred.segment(pooled_at, n_test) = task_pred[ts];
      pooled_truth.segment(pooled_at, n_test) = task_truth[ts];
      pooled_at += n_test;
      if (n_test >= 2) {
        const double r2 = predictive_r2(task_pred[ts], task_truth[ts]);
        out.rows.push_back(CvRow{rep, f, r2, n_test});
        fold_scores.push_back(r2);
      }
    }
    const double pooled_r2 = predictive_r2(pooled_pred, pooled_truth);
    out.rows.push_back(CvRow{rep, -1, pooled_r2, m});
    pooled_scores.push_back(pooled_r2);
  }

  const auto& scores = fold_scores.empty() ? pooled_scores : fold_scores;
  out.median = detail::quantile(scores, 0.5);
  out.iqr = detail::quantile(scores, 0.75) - detail::quantile(scores, 0.25);
  return out;
}

}  // namespace bsnmani
