#pragma once

#include <Eigen/Dense>

#include "bsnmani/errors.hpp"

namespace bsnmani {

// Kronecker product, (m1*m2) x (n1*n2), blocks g(a,b) * H.
inline Eigen::MatrixXd kron(const Eigen::MatrixXd& g,
                            const Eigen::MatrixXd& h) {
  if (g.size() == 0 || h.size() == 0) {
    throw DimensionError("kron: empty operand");
  }
  Eigen::MatrixXd out(g.rows() * h.rows(), g.cols() * h.cols());
  for (Eigen::Index a = 0; a < g.rows(); ++a) {
    for (Eigen::Index b = 0; b < g.cols(); ++b) {
      out.block(a * h.rows(), b * h.cols(), h.rows(), h.cols()) = g(a, b) * h;
    }
  }
  return out;
}

// Box product: rows pair a G-row with an H-row (G-row index outer), columns
// pair an H-column with a G-column (H-column index outer):
//   (G box H)[(a)*m2 + c, (d)*n1 + b] = g(a,b) * h(c,d)   [0-based]
// Equivalently kron(G, H) with its column blocks interleaved; reduces to the
// scalar product for 1x1 operands.
inline Eigen::MatrixXd boxprod(const Eigen::MatrixXd& g,
                               const Eigen::MatrixXd& h) {
  if (g.size() == 0 || h.size() == 0) {
    throw DimensionError("boxprod: empty operand");
  }
  const Eigen::Index m1 = g.rows(), n1 = g.cols();
  const Eigen::Index m2 = h.rows(), n2 = h.cols();
  Eigen::MatrixXd out(m1 * m2, n1 * n2);
  for (Eigen::Index a = 0; a < m1; ++a) {
    for (Eigen::Index c = 0; c < m2; ++c) {
      for (Eigen::Index d = 0; d < n2; ++d) {
        for (Eigen::Index b = 0; b < n1; ++b) {
          out(a * m2 + c, d * n1 + b) = g(a, b) * h(c, d);
        }
      }
    }
  }
  return out;
}

}  // namespace bsnmani
