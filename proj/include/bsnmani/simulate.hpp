#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bsnmani/data.hpp"
#include "bsnmani/errors.hpp"
#include "bsnmani/rng.hpp"
#include "bsnmani/stiefel.hpp"
#include "bsnmani/symmetric_network.hpp"

namespace bsnmani {

// Settings for the synthetic-data generator.  Signal-to-noise ratios are
// variance ratios: the network noise variance is chosen as
// (pooled variance of the mean-model edge values) / snr_y, and the outcome
// noise variance as (variance of the outcome means) / snr_c.  snr_c may be
// +infinity, in which case outcomes are emitted noise-free.
struct SimConfig {
  int n_nodes = 30;
  int q = 3;
  int n_subjects = 100;
  double snr_y = 3.0;
  double snr_c = 3.0;
  double lambda_rate = 1.0;

  // Ground-truth coefficients.  Empty vectors select the documented
  // defaults: beta cycles (1, -1, 0.5) out to length q and alpha cycles
  // (0.5, -0.5) out to the covariate count.
  Eigen::VectorXd beta_true;
  Eigen::VectorXd alpha_true;

  // Covariates per subject: standard-normal columns first, then
  // Bernoulli(1/2) columns.
  int n_continuous = 1;
  int n_binary = 1;

  // When set, each node pair gets its own noise variance drawn from an
  // inverse gamma whose mean is the homoscedastic target variance and whose
  // squared coefficient of variation is noise_dispersion.
  bool heteroscedastic = false;
  double noise_dispersion = 1.0;

  std::uint64_t seed = 1;
};

// Everything needed to score a fit against the generating process.
struct GroundTruth {
  StiefelPoint u_true;
  Eigen::MatrixXd lambdas_true;   // n_subjects x q
  double sigma_sq_true = 1.0;     // mean noise variance across node pairs
  Eigen::VectorXd edge_var_true;  // per-pair variances, vecl order
  Eigen::VectorXd beta_true;
  Eigen::VectorXd alpha_true;
  double tau_sq_true = 0.0;
};

struct SimResult {
  Dataset data;
  GroundTruth truth;
};

// Mean of squared deviations (population form); the SNR calibration divides
// this by the configured ratio to obtain the noise variance.
inline double population_variance(const Eigen::VectorXd& v) {
  if (v.size() == 0) throw DimensionError("population_variance: empty input");
  const double mean = v.mean();
  return (v.array() - mean).square().mean();
}

// Orthonormal basis whose columns indicate disjoint node blocks given as
// explicit node-index lists.
inline StiefelPoint make_block_u(int n, const std::vector<std::vector<int>>& blocks) {
  if (n < 1 || blocks.empty()) {
    throw ConfigurationError("make_block_u: need n >= 1 and >= 1 block");
  }
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(blocks.size()));
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& block = blocks[l];
    if (block.empty()) throw ConfigurationError("make_block_u: empty block");
    for (int node : block) {
      if (node < 0 || node >= n) {
        throw ConfigurationError("make_block_u: node index out of range");
      }
      if (used[static_cast<std::size_t>(node)]) {
        throw ConfigurationError("make_block_u: blocks overlap");
      }
      used[static_cast<std::size_t>(node)] = true;
      u(node, static_cast<Eigen::Index>(l)) = 1.0;
    }
    u.col(static_cast<Eigen::Index>(l)).normalize();
  }
  return StiefelPoint(u);
}

// Contiguous-block convenience: q blocks laid out from node 0 with the given
// sizes (empty -> q near-equal blocks covering all n nodes, the last block
// absorbing the remainder).
inline StiefelPoint make_block_u(int n, int q, std::vector<int> block_sizes = {}) {
  if (q < 1 || q > n) throw ConfigurationError("make_block_u: need 1 <= q <= n");
  if (block_sizes.empty()) {
    const int base = n / q;
    block_sizes.assign(static_cast<std::size_t>(q), base);
    block_sizes.back() = n - base * (q - 1);
  }
  if (static_cast<int>(block_sizes.size()) != q) {
    throw ConfigurationError("make_block_u: need one size per block");
  }
  std::vector<std::vector<int>> blocks;
  int node = 0;
  for (int size : block_sizes) {
    if (size < 1 || node + size > n) {
      throw ConfigurationError("make_block_u: block sizes exceed node count");
    }
    std::vector<int> block(static_cast<std::size_t>(size));
    for (int j = 0; j < size; ++j) block[static_cast<std::size_t>(j)] = node + j;
    node += size;
    blocks.push_back(std::move(block));
  }
  return make_block_u(n, blocks);
}

namespace detail {

inline Eigen::VectorXd cycled_default(std::initializer_list<double> pattern, int len) {
  Eigen::VectorXd out(len);
  int k = 0;
  for (int j = 0; j < len; ++j) {
    out[j] = *(pattern.begin() + k);
    k = (k + 1) % static_cast<int>(pattern.size());
  }
  return out;
}

}  // namespace detail

// Draws one synthetic study.  Each random channel owns its own stream of
// the configured seed so that, e.g., changing the covariate layout cannot
// shift the network noise sequence: 0 loadings, 1 covariates, 2 per-pair
// variances, 3 network noise, 4 outcome noise.
inline SimResult generate(const SimConfig& config) {
  const int n = config.n_nodes;
  const int q = config.q;
  const int m = config.n_subjects;
  const int r = config.n_continuous + config.n_binary;
  if (n < 2 || q < 1 || q > n || m < 1) {
    throw ConfigurationError("generate: need n >= 2 and 1 <= q <= n and m >= 1");
  }
  if (!(config.snr_y > 0.0) || !(config.snr_c > 0.0)) {
    throw ConfigurationError("generate: snr_y and snr_c must be > 0");
  }
  if (!(config.lambda_rate > 0.0)) {
    throw ConfigurationError("generate: lambda_rate must be > 0");
  }
  if (config.n_continuous < 0 || config.n_binary < 0) {
    throw ConfigurationError("generate: covariate counts must be >= 0");
  }
  if (config.heteroscedastic && !(config.noise_dispersion > 0.0)) {
    throw ConfigurationError("generate: noise_dispersion must be > 0");
  }
  if (config.beta_true.size() != 0 && config.beta_true.size() != q) {
    throw ConfigurationError("generate: beta_true must have length q");
  }
  if (config.alpha_true.size() != 0 && config.alpha_true.size() != r) {
    throw ConfigurationError("generate: alpha_true must match covariate count");
  }

  GroundTruth truth{make_block_u(n, q),
                    Eigen::MatrixXd(m, q),
                    1.0,
                    Eigen::VectorXd(),
                    config.beta_true.size() ? config.beta_true
                                            : detail::cycled_default({1.0, -1.0, 0.5}, q),
                    config.alpha_true.size() ? config.alpha_true
                                             : detail::cycled_default({0.5, -0.5}, r),
                    0.0};

  RngStream lambda_rng(config.seed, 0);
  for (int i = 0; i < m; ++i) {
    for (int l = 0; l < q; ++l) {
      truth.lambdas_true(i, l) = lambda_rng.exponential(config.lambda_rate);
    }
  }

  RngStream cov_rng(config.seed, 1);
  Eigen::MatrixXd z(m, r);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < config.n_continuous; ++j) z(i, j) = cov_rng.normal();
    for (int j = 0; j < config.n_binary; ++j) {
      z(i, config.n_continuous + j) = cov_rng.uniform() < 0.5 ? 0.0 : 1.0;
    }
  }

  // Mean networks and the pooled variance of their strict-lower entries.
  const Eigen::MatrixXd& u = truth.u_true.matrix();
  const int p = pair_count(n);
  std::vector<Eigen::VectorXd> mean_vecls;
  mean_vecls.reserve(static_cast<std::size_t>(m));
  Eigen::VectorXd pooled(static_cast<Eigen::Index>(m) * p);
  for (int i = 0; i < m; ++i) {
    const Eigen::MatrixXd mean =
        u * truth.lambdas_true.row(i).transpose().asDiagonal() * u.transpose();
    mean_vecls.push_back(vecl(mean));
    pooled.segment(static_cast<Eigen::Index>(i) * p, p) = mean_vecls.back();
  }
  const double mean_model_var = population_variance(pooled);
  if (!(mean_model_var > 0.0)) {
    throw ConfigurationError("generate: mean model has zero variance");
  }
  truth.sigma_sq_true = mean_model_var / config.snr_y;

  RngStream edge_var_rng(config.seed, 2);
  truth.edge_var_true = Eigen::VectorXd::Constant(p, truth.sigma_sq_true);
  if (config.heteroscedastic) {
    // Inverse gamma with mean sigma_sq_true and squared coefficient of
    // variation noise_dispersion: shape = 2 + 1/dispersion keeps the mean
    // finite, scale = mean * (shape - 1).
    const double shape = 2.0 + 1.0 / config.noise_dispersion;
    const double scale = truth.sigma_sq_true * (shape - 1.0);
    for (int k = 0; k < p; ++k) {
      truth.edge_var_true[k] = scale / edge_var_rng.gamma(shape, 1.0);
    }
  }

  RngStream noise_rng(config.seed, 3);
  std::vector<SymmetricNetwork> nets;
  nets.reserve(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    Eigen::VectorXd v = mean_vecls[static_cast<std::size_t>(i)];
    for (int k = 0; k < p; ++k) {
      v[k] += noise_rng.normal(0.0, truth.edge_var_true[k]);
    }
    nets.push_back(SymmetricNetwork::from_vecl(v, n));
  }

  Eigen::VectorXd means(m);
  for (int i = 0; i < m; ++i) {
    means[i] = truth.beta_true.dot(truth.lambdas_true.row(i).transpose()) +
               truth.alpha_true.dot(z.row(i).transpose());
  }
  RngStream outcome_rng(config.seed, 4);
  Eigen::VectorXd c = means;
  if (std::isinf(config.snr_c)) {
    truth.tau_sq_true = 0.0;
  } else {
    truth.tau_sq_true = population_variance(means) / config.snr_c;
    for (int i = 0; i < m; ++i) {
      c[i] += outcome_rng.normal(0.0, truth.tau_sq_true);
    }
  }

  return SimResult{Dataset(std::move(nets), std::move(c), std::move(z)),
                   std::move(truth)};
}

}  // namespace bsnmani
