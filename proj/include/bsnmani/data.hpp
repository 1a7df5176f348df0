#pragma once

#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bsnmani/errors.hpp"
#include "bsnmani/symmetric_network.hpp"

namespace bsnmani {

// One subject: network, scalar outcome, covariates.
struct SubjectRecord {
  SymmetricNetwork y;
  double c = 0.0;
  Eigen::VectorXd z;
};

// Column-aligned study data.  Networks all share one node set; covariate
// rows all share one length r (r == 0 is allowed).
class Dataset {
 public:
  Dataset(std::vector<SymmetricNetwork> networks, Eigen::VectorXd outcomes,
          Eigen::MatrixXd covariates)
      : networks_(std::move(networks)),
        outcomes_(std::move(outcomes)),
        covariates_(std::move(covariates)) {
    const auto m = static_cast<Eigen::Index>(networks_.size());
    if (m == 0) throw DimensionError("Dataset: no subjects");
    if (outcomes_.size() != m || covariates_.rows() != m) {
      throw DimensionError("Dataset: networks/outcomes/covariates disagree");
    }
    for (const auto& y : networks_) {
      if (y.n() != networks_.front().n()) {
        throw DimensionError("Dataset: networks have mixed node counts");
      }
    }
    if (!outcomes_.allFinite() || !covariates_.allFinite()) {
      throw ValidationError("Dataset: non-finite outcome or covariate");
    }
  }

  static Dataset from_records(const std::vector<SubjectRecord>& records) {
    if (records.empty()) throw DimensionError("Dataset: no subjects");
    const auto r = records.front().z.size();
    std::vector<SymmetricNetwork> nets;
    nets.reserve(records.size());
    Eigen::VectorXd c(records.size());
    Eigen::MatrixXd z(records.size(), r);
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].z.size() != r) {
        throw DimensionError("Dataset: covariate lengths disagree");
      }
      nets.push_back(records[i].y);
      c[static_cast<Eigen::Index>(i)] = records[i].c;
      z.row(static_cast<Eigen::Index>(i)) = records[i].z.transpose();
    }
    return Dataset(std::move(nets), std::move(c), std::move(z));
  }

  int n_subjects() const { return static_cast<int>(networks_.size()); }
  int n_nodes() const { return networks_.front().n(); }
  int n_covariates() const { return static_cast<int>(covariates_.cols()); }

  std::span<const SymmetricNetwork> networks() const { return networks_; }
  const SymmetricNetwork& network(int i) const {
    return networks_[static_cast<std::size_t>(i)];
  }
  double outcome(int i) const { return outcomes_[i]; }
  const Eigen::VectorXd& outcomes() const { return outcomes_; }
  Eigen::VectorXd covariate_row(int i) const {
    return covariates_.row(i).transpose();
  }
  const Eigen::MatrixXd& covariates() const { return covariates_; }

  // Subset by subject index (used by the cross-validation harness).
  Dataset subset(const std::vector<int>& idx) const {
    if (idx.empty()) throw DimensionError("Dataset::subset: empty index set");
    std::vector<SymmetricNetwork> nets;
    nets.reserve(idx.size());
    Eigen::VectorXd c(static_cast<Eigen::Index>(idx.size()));
    Eigen::MatrixXd z(static_cast<Eigen::Index>(idx.size()),
                      covariates_.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const int i = idx[k];
      if (i < 0 || i >= n_subjects()) {
        throw DimensionError("Dataset::subset: index out of range");
      }
      nets.push_back(networks_[static_cast<std::size_t>(i)]);
      c[static_cast<Eigen::Index>(k)] = outcomes_[i];
      z.row(static_cast<Eigen::Index>(k)) = covariates_.row(i);
    }
    return Dataset(std::move(nets), std::move(c), std::move(z));
  }

 private:
  std::vector<SymmetricNetwork> networks_;
  Eigen::VectorXd outcomes_;
  Eigen::MatrixXd covariates_;
};

}  // namespace bsnmani
