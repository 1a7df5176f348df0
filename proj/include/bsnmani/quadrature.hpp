#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "bsnmani/errors.hpp"

namespace bsnmani {

enum class QuadratureKind { kGaussHermite1d, kSparseUniform3d };

inline QuadratureKind quadrature_kind_from_string(const std::string& s) {
  if (s == "gauss-hermite-1d") return QuadratureKind::kGaussHermite1d;
  if (s == "sparse-uniform-3d") return QuadratureKind::kSparseUniform3d;
  throw ConfigurationError("unknown quadrature kind: " + s);
}

// A fixed node/weight rule.  gauss-hermite-1d integrates against the standard
// normal weight (1/sqrt(2*pi)) exp(-x^2/2) on R; sparse-uniform-3d integrates
// against the unit weight on (0,1)^3.
struct QuadratureRule {
  QuadratureKind kind;
  int dims = 0;
  Eigen::MatrixXd nodes;    // one row per node, `dims` columns
  Eigen::VectorXd weights;  // same length; sparse-grid weights may be negative

  int size() const { return static_cast<int>(weights.size()); }
};

namespace detail {

// Christoffel weight 1 / sum_{k<n} p_k(x)^2 with the orthonormal probabilists'
// Hermite recurrence, rescaled on the fly so the sum never overflows.  The
// eigenvector-based Golub-Welsch weights lose all relative accuracy once the
// true weight drops below ~1e-32 (the solver's absolute error squared), which
// poisons edge nodes of rules with >= 64 points; this form stays accurate down
// to the underflow threshold.
inline double hermite_christoffel_weight(double x, int n_nodes) {
  double p_prev = 0.0;  // p_{k-1}(x)
  double p_cur = 1.0;   // p_k(x), starting at p_0 = 1
  double sum_sq = 1.0;
  double log_scale = 0.0;  // true p = stored p * exp(log_scale)
  for (int k = 1; k < n_nodes; ++k) {
    const double p_next =
        (x * p_cur - std::sqrt(static_cast<double>(k - 1)) * p_prev) /
        std::sqrt(static_cast<double>(k));
    p_prev = p_cur;
    p_cur = p_next;
    sum_sq += p_cur * p_cur;
    if (std::abs(p_cur) > 1e150) {
      p_prev *= 1e-150;
      p_cur *= 1e-150;
      sum_sq *= 1e-300;
      log_scale += 150.0 * std::log(10.0);
    }
  }
  return std::exp(-(std::log(sum_sq) + 2.0 * log_scale));
}

}  // namespace detail

// Probabilists' Gauss-Hermite rule: nodes are the eigenvalues of the Jacobi
// matrix (off-diagonal sqrt(k)); each weight is the Christoffel function at
// its node.  Weights are positive and sum to 1.
inline QuadratureRule gauss_hermite(int n_nodes) {
  if (n_nodes < 1) throw ConfigurationError("gauss_hermite: need >= 1 node");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n_nodes, n_nodes);
  for (int k = 1; k < n_nodes; ++k) {
    jacobi(k, k - 1) = std::sqrt(static_cast<double>(k));
    jacobi(k - 1, k) = jacobi(k, k - 1);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
  if (es.info() != Eigen::Success) {
    throw NumericalError("gauss_hermite: eigendecomposition failed");
  }
  QuadratureRule rule;
  rule.kind = QuadratureKind::kGaussHermite1d;
  rule.dims = 1;
  rule.nodes = es.eigenvalues();  // ascending
  rule.weights.resize(n_nodes);
  for (int r = 0; r < n_nodes; ++r) {
    rule.weights[r] = detail::hermite_christoffel_weight(rule.nodes(r, 0),
                                                         n_nodes);
  }
  return rule;
}

namespace detail {

// Fejer type-2 rule of level k on (0,1): the 2^k - 1 interior Chebyshev
// points, open and nested across levels.  Weights sum to 1.
struct Fejer2Level {
  std::vector<std::int64_t> index;  // node i at level k has index i (1-based)
  std::vector<double> weight;
};

inline Fejer2Level fejer2_level(int level) {
  const int n = (1 << level) - 1;
  Fejer2Level out;
  out.index.reserve(n);
  out.weight.reserve(n);
  const double denom = static_cast<double>(n + 1);  // 2^level
  for (int i = 1; i <= n; ++i) {
    const double theta = M_PI * static_cast<double>(i) / denom;
    double s = 0.0;
    for (int m = 1; 2 * m - 1 <= n; ++m) {
      s += std::sin((2 * m - 1) * theta) / (2 * m - 1);
    }
    const double w = (4.0 / denom) * std::sin(theta) * s;  // weight on [-1,1]
    out.index.push_back(i);
    out.weight.push_back(0.5 * w);  // map to (0,1)
  }
  return out;
}

// Position of node index i of level k on the canonical dyadic grid of the
// finest level, so coinciding nodes across levels share an integer key.
inline std::int64_t dyadic_key(std::int64_t i, int level, int max_level) {
  return i << (max_level - level);
}

inline double dyadic_node(std::int64_t key, int max_level) {
  const double theta =
      M_PI * static_cast<double>(key) / static_cast<double>(1 << max_level);
  return 0.5 * (1.0 + std::cos(theta));
}

}  // namespace detail

// Smolyak sparse grid on (0,1)^3 built from the nested Fejer-2 family.
// `level` is the maximum 1-D level entering the combination; weights sum to 1
// but individual weights may be negative.  level 6 has 1023 nodes.
inline QuadratureRule sparse_uniform_3d(int level) {
  if (level < 1) throw ConfigurationError("sparse_uniform_3d: level >= 1");
  constexpr int kDims = 3;
  std::vector<detail::Fejer2Level> rules;
  rules.reserve(level);
  for (int k = 1; k <= level; ++k) rules.push_back(detail::fejer2_level(k));

  // Combination technique: sum over |k| in [level, level + d - 1] of
  // (-1)^{top - |k|} C(d-1, top - |k|) * tensor(U_{k1}, U_{k2}, U_{k3}).
  const int top = level + kDims - 1;
  std::map<std::array<std::int64_t, 3>, double> merged;
  for (int k1 = 1; k1 <= level; ++k1) {
    for (int k2 = 1; k2 <= level; ++k2) {
      for (int k3 = 1; k3 <= level; ++k3) {
        const int norm = k1 + k2 + k3;
        if (norm < level || norm > top) continue;
        const int excess = top - norm;  // 0, 1, or 2 for d = 3
        const double binom = (excess == 1) ? 2.0 : 1.0;
        const double coeff = ((excess % 2) ? -1.0 : 1.0) * binom;
        const auto& r1 = rules[k1 - 1];
        const auto& r2 = rules[k2 - 1];
        const auto& r3 = rules[k3 - 1];
        for (std::size_t a = 0; a < r1.index.size(); ++a) {
          for (std::size_t b = 0; b < r2.index.size(); ++b) {
            for (std::size_t c = 0; c < r3.index.size(); ++c) {
              const std::array<std::int64_t, 3> key = {
                  detail::dyadic_key(r1.index[a], k1, level),
                  detail::dyadic_key(r2.index[b], k2, level),
                  detail::dyadic_key(r3.index[c], k3, level)};
              merged[key] += coeff * r1.weight[a] * r2.weight[b] * r3.weight[c];
            }
          }
        }
      }
    }
  }

  QuadratureRule rule;
  rule.kind = QuadratureKind::kSparseUniform3d;
  rule.dims = kDims;
  rule.nodes.resize(static_cast<Eigen::Index>(merged.size()), kDims);
  rule.weights.resize(static_cast<Eigen::Index>(merged.size()));
  Eigen::Index row = 0;
  for (const auto& [key, w] : merged) {
    for (int d = 0; d < kDims; ++d) {
      rule.nodes(row, d) = detail::dyadic_node(key[d], level);
    }
    rule.weights[row] = w;
    ++row;
  }
  return rule;
}

// Rule factory used by config plumbing; `level` is the node count for
// gauss-hermite-1d and the Smolyak level for sparse-uniform-3d.
inline QuadratureRule build_quadrature(QuadratureKind kind, int level) {
  switch (kind) {
    case QuadratureKind::kGaussHermite1d:
      return gauss_hermite(level);
    case QuadratureKind::kSparseUniform3d:
      return sparse_uniform_3d(level);
  }
  throw ConfigurationError("build_quadrature: bad kind");
}

}  // namespace bsnmani
