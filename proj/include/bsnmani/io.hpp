#pragma once

// File formats: CSV artifacts (networks, clinical covariates, posterior
// draws, predictions, cross-validation results), JSON metadata, and the
// flat key = value run-configuration dialect understood by the CLI.
//
// Layout contracts:
//   networks.csv   header `subject_id,e_2_1,e_3_1,...`; one row per subject;
//                  edge columns follow the column-major strict-lower vecl
//                  order (pairs (2,1),(3,1),...,(n,1),(3,2),..., 1-based).
//   clinical.csv   header `subject_id,outcome,z_1,...,z_r`; subject ids must
//                  match networks.csv row for row.
//   meta.json      {"n": ..., "node_labels": [...],
//                   "vecl_ordering": "column-major-strict-lower"}
//   draws.csv      long format `iteration,name,index,value` covering the
//                  scalar variance draws and the beta/alpha coefficients.
//   u_draws.csv    first line `n,q`, second line the dimensions, then one
//                  row per retained draw, flattened row-major over
//                  (node, column).  lambda_draws.csv mirrors this with
//                  leading dimensions `m,q`.
//   predictions.csv `subject_id,prediction,predictive_sd`.
//   cv_results.csv  `repeat,fold,r2,n_test,median,iqr`; per-fold and pooled
//                  rows fill the first four columns, a single trailing
//                  summary row fills the last two.
//
// All floating-point values are serialized with 17 significant digits so a
// write/read round trip reproduces the in-memory object bit for bit.

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsnmani/errors.hpp"
#include "bsnmani/model.hpp"
#include "bsnmani/sampler.hpp"
#include "bsnmani/simulate.hpp"
#include "bsnmani/evaluate.hpp"

namespace bsnmani {

inline std::string format_real(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return std::string(buf);
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& tok, const std::string& file,
                           int line_no) {
  const std::string t = trim(tok);
  if (t.empty())
    throw ValidationError(file + ":" + std::to_string(line_no) +
                          ": empty numeric field");
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  // ERANGE with a finite result is a harmless underflow to (sub)normal.
  if (end != t.c_str() + t.size() ||
      (errno == ERANGE && (v == HUGE_VAL || v == -HUGE_VAL)))
    throw ValidationError(file + ":" + std::to_string(line_no) +
                          ": cannot parse '" + t + "' as a real number");
  return v;
}

inline long long parse_int(const std::string& tok, const std::string& file,
                           int line_no) {
  const std::string t = trim(tok);
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(t.c_str(), &end, 10);
  if (t.empty() || end != t.c_str() + t.size() || errno == ERANGE)
    throw ValidationError(file + ":" + std::to_string(line_no) +
                          ": cannot parse '" + t + "' as an integer");
  return v;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "' for reading");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  // Drop trailing blank lines so files edited by hand still load.
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  return lines;
}

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  out << content;
  out.flush();
  if (!out) throw ValidationError("failed while writing '" + path + "'");
}

// Solves n from p = n(n-1)/2; throws when p is not a triangular number.
inline int nodes_from_edge_count(std::size_t p, const std::string& context) {
  const double root = (1.0 + std::sqrt(1.0 + 8.0 * double(p))) / 2.0;
  const int n = int(std::llround(root));
  if (n < 2 || std::size_t(n) * (n - 1) / 2 != p)
    throw ValidationError(context + ": " + std::to_string(p) +
                          " edge columns do not correspond to any whole "
                          "number of nodes");
  return n;
}

inline std::vector<std::string> edge_labels(int n) {
  std::vector<std::string> labels;
  labels.reserve(std::size_t(n) * (n - 1) / 2);
  for (int k = 1; k < n; ++k)
    for (int j = k + 1; j <= n; ++j)
      labels.push_back("e_" + std::to_string(j) + "_" + std::to_string(k));
  return labels;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// networks.csv

inline void write_networks_csv(const std::string& path,
                               const std::vector<std::string>& subject_ids,
                               const std::vector<SymmetricNetwork>& networks) {
  if (subject_ids.size() != networks.size())
    throw DimensionError("subject id count " +
                         std::to_string(subject_ids.size()) +
                         " does not match network count " +
                         std::to_string(networks.size()));
  if (networks.empty())
    throw ValidationError("refusing to write an empty networks file");
  const int n = networks.front().n();
  std::ostringstream out;
  out << "subject_id";
  for (const auto& lbl : detail::edge_labels(n)) out << ',' << lbl;
  out << '\n';
  for (std::size_t i = 0; i < networks.size(); ++i) {
    if (networks[i].n() != n)
      throw DimensionError("network " + std::to_string(i) +
                           " has a different node count");
    out << subject_ids[i];
    const Eigen::VectorXd v = networks[i].vecl();
    for (Eigen::Index k = 0; k < v.size(); ++k)
      out << ',' << format_real(v[k]);
    out << '\n';
  }
  detail::write_text(path, out.str());
}

struct NetworksFile {
  std::vector<std::string> subject_ids;
  std::vector<SymmetricNetwork> networks;
  int n_nodes = 0;
};

inline NetworksFile read_networks_csv(const std::string& path) {
  const auto lines = detail::read_lines(path);
  if (lines.size() < 2)
    throw ValidationError(path + ": expected a header and at least one row");
  const auto header = detail::split_csv(lines[0]);
  if (header.empty() || detail::trim(header[0]) != "subject_id")
    throw ValidationError(path + ": first column must be subject_id");
  const std::size_t p = header.size() - 1;
  const int n = detail::nodes_from_edge_count(p, path);
  const auto expected = detail::edge_labels(n);
  for (std::size_t k = 0; k < p; ++k)
    if (detail::trim(header[k + 1]) != expected[k])
      throw ValidationError(path + ": edge column " + std::to_string(k + 1) +
                            " is named '" + detail::trim(header[k + 1]) +
                            "' but the column-major strict-lower order "
                            "requires '" + expected[k] + "'");
  NetworksFile out;
  out.n_nodes = n;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = detail::split_csv(lines[i]);
    if (cells.size() != header.size())
      throw ValidationError(path + ":" + std::to_string(i + 1) + ": expected " +
                            std::to_string(header.size()) + " fields, found " +
                            std::to_string(cells.size()));
    const std::string id = detail::trim(cells[0]);
    if (id.empty())
      throw ValidationError(path + ":" + std::to_string(i + 1) +
                            ": empty subject id");
    Eigen::VectorXd v(p);
    for (std::size_t k = 0; k < p; ++k)
      v[Eigen::Index(k)] = detail::parse_double(cells[k + 1], path, int(i + 1));
    out.subject_ids.push_back(id);
    out.networks.push_back(SymmetricNetwork::from_vecl(v, n));
  }
  return out;
}

// ---------------------------------------------------------------------------
// clinical.csv

inline void write_clinical_csv(const std::string& path,
                               const std::vector<std::string>& subject_ids,
                               const Eigen::VectorXd& outcomes,
                               const Eigen::MatrixXd& covariates) {
  const std::size_t m = subject_ids.size();
  if (outcomes.size() != Eigen::Index(m) ||
      covariates.rows() != Eigen::Index(m))
    throw DimensionError("clinical table rows disagree: " + std::to_string(m) +
                         " ids, " + std::to_string(outcomes.size()) +
                         " outcomes, " + std::to_string(covariates.rows()) +
                         " covariate rows");
  std::ostringstream out;
  out << "subject_id,outcome";
  for (Eigen::Index j = 0; j < covariates.cols(); ++j)
    out << ",z_" << (j + 1);
  out << '\n';
  for (std::size_t i = 0; i < m; ++i) {
    out << subject_ids[i] << ',' << format_real(outcomes[Eigen::Index(i)]);
    for (Eigen::Index j = 0; j < covariates.cols(); ++j)
      out << ',' << format_real(covariates(Eigen::Index(i), j));
    out << '\n';
  }
  detail::write_text(path, out.str());
}

struct ClinicalFile {
  std::vector<std::string> subject_ids;
  Eigen::VectorXd outcomes;
  Eigen::MatrixXd covariates;
};

inline ClinicalFile read_clinical_csv(const std::string& path) {
  const auto lines = detail::read_lines(path);
  if (lines.size() < 2)
    throw ValidationError(path + ": expected a header and at least one row");
  const auto header = detail::split_csv(lines[0]);
  if (header.size() < 2 || detail::trim(header[0]) != "subject_id" ||
      detail::trim(header[1]) != "outcome")
    throw ValidationError(path + ": header must start subject_id,outcome");
  const std::size_t r = header.size() - 2;
  for (std::size_t j = 0; j < r; ++j)
    if (detail::trim(header[j + 2]) != "z_" + std::to_string(j + 1))
      throw ValidationError(path + ": covariate column " +
                            std::to_string(j + 1) + " must be named z_" +
                            std::to_string(j + 1));
  const std::size_t m = lines.size() - 1;
  ClinicalFile out;
  out.outcomes.resize(m);
  out.covariates.resize(m, r);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = detail::split_csv(lines[i]);
    if (cells.size() != header.size())
      throw ValidationError(path + ":" + std::to_string(i + 1) + ": expected " +
                            std::to_string(header.size()) + " fields, found " +
                            std::to_string(cells.size()));
    const std::string id = detail::trim(cells[0]);
    if (id.empty())
      throw ValidationError(path + ":" + std::to_string(i + 1) +
                            ": empty subject id");
    out.subject_ids.push_back(id);
    out.outcomes[Eigen::Index(i - 1)] =
        detail::parse_double(cells[1], path, int(i + 1));
    for (std::size_t j = 0; j < r; ++j)
      out.covariates(Eigen::Index(i - 1), Eigen::Index(j)) =
          detail::parse_double(cells[j + 2], path, int(i + 1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// meta.json

struct MetaInfo {
  int n_nodes = 0;
  std::vector<std::string> node_labels;
};

inline void write_meta_json(const std::string& path, const MetaInfo& meta) {
  if (int(meta.node_labels.size()) != meta.n_nodes)
    throw DimensionError("meta has " + std::to_string(meta.node_labels.size()) +
                         " node labels for " + std::to_string(meta.n_nodes) +
                         " nodes");
  nlohmann::json j;
  j["n"] = meta.n_nodes;
  j["node_labels"] = meta.node_labels;
  j["vecl_ordering"] = "column-major-strict-lower";
  detail::write_text(path, j.dump(2) + "\n");
}

inline MetaInfo read_meta_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "' for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": invalid JSON: " + e.what());
  }
  MetaInfo meta;
  try {
    meta.n_nodes = j.at("n").get<int>();
    meta.node_labels = j.at("node_labels").get<std::vector<std::string>>();
    const std::string ordering = j.at("vecl_ordering").get<std::string>();
    if (ordering != "column-major-strict-lower")
      throw ValidationError(path + ": unsupported vecl ordering '" + ordering +
                            "'");
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": missing or malformed field: " + e.what());
  }
  if (meta.n_nodes < 2)
    throw ValidationError(path + ": n must be at least 2");
  if (int(meta.node_labels.size()) != meta.n_nodes)
    throw ValidationError(path + ": " + std::to_string(meta.node_labels.size()) +
                          " node labels for n=" + std::to_string(meta.n_nodes));
  return meta;
}

// ---------------------------------------------------------------------------
// Dataset assembly from the on-disk artifacts.

struct LoadedDataset {
  Dataset data;
  std::vector<std::string> subject_ids;
};

inline LoadedDataset load_dataset(const std::string& networks_path,
                                  const std::string& clinical_path,
                                  const std::string& meta_path = "") {
  NetworksFile nets = read_networks_csv(networks_path);
  ClinicalFile clin = read_clinical_csv(clinical_path);
  if (nets.subject_ids != clin.subject_ids)
    throw ValidationError(networks_path + " and " + clinical_path +
                          " disagree on subject ids or their order");
  if (!meta_path.empty()) {
    const MetaInfo meta = read_meta_json(meta_path);
    if (meta.n_nodes != nets.n_nodes)
      throw ValidationError(meta_path + " declares n=" +
                            std::to_string(meta.n_nodes) + " but " +
                            networks_path + " has n=" +
                            std::to_string(nets.n_nodes));
  }
  LoadedDataset out{Dataset(std::move(nets.networks), clin.outcomes,
                            clin.covariates),
                    std::move(nets.subject_ids)};
  return out;
}

// ---------------------------------------------------------------------------
// Posterior draws: draws.csv (long scalars/coefficients) plus the flattened
// u_draws.csv / lambda_draws.csv matrices.

inline void write_draws_csv(const std::string& path,
                            const PosteriorDraws& draws) {
  const std::size_t k = draws.beta.size();
  if (k == 0) throw ValidationError("no retained draws to write");
  std::ostringstream out;
  out << "iteration,name,index,value\n";
  auto scalar = [&](std::size_t it, const char* name, double v) {
    out << it << ',' << name << ",0," << format_real(v) << '\n';
  };
  for (std::size_t it = 0; it < k; ++it) {
    for (Eigen::Index j = 0; j < draws.beta[it].size(); ++j)
      out << it << ",beta," << j << ','
          << format_real(draws.beta[it][j]) << '\n';
    for (Eigen::Index j = 0; j < draws.alpha[it].size(); ++j)
      out << it << ",alpha," << j << ','
          << format_real(draws.alpha[it][j]) << '\n';
    scalar(it, "sigma_sq", draws.sigma_sq[it]);
    scalar(it, "tau_sq", draws.tau_sq[it]);
    scalar(it, "tau_lambda_sq", draws.tau_lambda_sq[it]);
    scalar(it, "tau_beta_sq", draws.tau_beta_sq[it]);
    scalar(it, "tau_alpha_sq", draws.tau_alpha_sq[it]);
  }
  detail::write_text(path, out.str());
}

// Writes one flattened matrix per retained draw.  The first line names the
// dimensions, the second gives their values, and each subsequent row holds
// rows*cols values in row-major order.
inline void write_matrix_draws_csv(const std::string& path,
                                   const char* rows_name, const char* cols_name,
                                   const std::vector<Eigen::MatrixXd>& draws) {
  if (draws.empty()) throw ValidationError("no retained draws to write");
  const Eigen::Index rows = draws.front().rows();
  const Eigen::Index cols = draws.front().cols();
  std::ostringstream out;
  out << rows_name << ',' << cols_name << '\n' << rows << ',' << cols << '\n';
  for (const Eigen::MatrixXd& m : draws) {
    if (m.rows() != rows || m.cols() != cols)
      throw DimensionError("draw shape changed mid-sequence");
    bool first = true;
    for (Eigen::Index a = 0; a < rows; ++a)
      for (Eigen::Index b = 0; b < cols; ++b) {
        if (!first) out << ',';
        out << format_real(m(a, b));
        first = false;
      }
    out << '\n';
  }
  detail::write_text(path, out.str());
}

inline std::vector<Eigen::MatrixXd> read_matrix_draws_csv(
    const std::string& path, const char* rows_name, const char* cols_name) {
  const auto lines = detail::read_lines(path);
  if (lines.size() < 3)
    throw ValidationError(path +
                          ": expected dimension header, dimensions, and at "
                          "least one draw row");
  const auto names = detail::split_csv(lines[0]);
  if (names.size() != 2 || detail::trim(names[0]) != rows_name ||
      detail::trim(names[1]) != cols_name)
    throw ValidationError(path + ": first line must be '" +
                          std::string(rows_name) + "," + cols_name + "'");
  const auto dims = detail::split_csv(lines[1]);
  if (dims.size() != 2)
    throw ValidationError(path + ": second line must hold two dimensions");
  const long long rows = detail::parse_int(dims[0], path, 2);
  const long long cols = detail::parse_int(dims[1], path, 2);
  if (rows < 1 || cols < 1)
    throw ValidationError(path + ": dimensions must be positive");
  std::vector<Eigen::MatrixXd> out;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    const auto cells = detail::split_csv(lines[i]);
    if (cells.size() != std::size_t(rows * cols))
      throw ValidationError(path + ":" + std::to_string(i + 1) + ": expected " +
                            std::to_string(rows * cols) + " values, found " +
                            std::to_string(cells.size()));
    Eigen::MatrixXd m(rows, cols);
    std::size_t k = 0;
    for (long long a = 0; a < rows; ++a)
      for (long long b = 0; b < cols; ++b)
        m(Eigen::Index(a), Eigen::Index(b)) =
            detail::parse_double(cells[k++], path, int(i + 1));
    out.push_back(std::move(m));
  }
  return out;
}

inline void write_u_draws_csv(const std::string& path,
                              const PosteriorDraws& draws) {
  write_matrix_draws_csv(path, "n", "q", draws.u);
}

inline void write_lambda_draws_csv(const std::string& path,
                                   const PosteriorDraws& draws) {
  write_matrix_draws_csv(path, "m", "q", draws.lambdas);
}

// Rebuilds the posterior container from the three draw files written by the
// fit command.  Traces and diagnostics that live in run.json are not
// repopulated here; everything needed by predict/evaluate is.
inline PosteriorDraws read_posterior(const std::string& draws_path,
                                     const std::string& u_path,
                                     const std::string& lambda_path) {
  PosteriorDraws out;
  out.u = read_matrix_draws_csv(u_path, "n", "q");
  out.lambdas = read_matrix_draws_csv(lambda_path, "m", "q");
  const auto lines = detail::read_lines(draws_path);
  if (lines.size() < 2)
    throw ValidationError(draws_path +
                          ": expected a header and at least one row");
  if (detail::trim(lines[0]) != "iteration,name,index,value")
    throw ValidationError(draws_path +
                          ": header must be iteration,name,index,value");
  struct Row {
    long long it;
    std::string name;
    long long index;
    double value;
  };
  std::vector<Row> rows;
  long long max_it = -1;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = detail::split_csv(lines[i]);
    if (cells.size() != 4)
      throw ValidationError(draws_path + ":" + std::to_string(i + 1) +
                            ": expected 4 fields");
    Row row;
    row.it = detail::parse_int(cells[0], draws_path, int(i + 1));
    row.name = detail::trim(cells[1]);
    row.index = detail::parse_int(cells[2], draws_path, int(i + 1));
    row.value = detail::parse_double(cells[3], draws_path, int(i + 1));
    if (row.it < 0 || row.index < 0)
      throw ValidationError(draws_path + ":" + std::to_string(i + 1) +
                            ": negative iteration or index");
    max_it = std::max(max_it, row.it);
    rows.push_back(std::move(row));
  }
  const std::size_t k = std::size_t(max_it + 1);
  if (k != out.u.size() || k != out.lambdas.size())
    throw ValidationError("draw files disagree: " + draws_path + " has " +
                          std::to_string(k) + " iterations, " + u_path +
                          " has " + std::to_string(out.u.size()) + ", " +
                          lambda_path + " has " +
                          std::to_string(out.lambdas.size()));
  long long beta_dim = 0, alpha_dim = 0;
  for (const Row& row : rows) {
    if (row.name == "beta") beta_dim = std::max(beta_dim, row.index + 1);
    if (row.name == "alpha") alpha_dim = std::max(alpha_dim, row.index + 1);
  }
  out.beta.assign(k, Eigen::VectorXd::Constant(beta_dim,
                                               std::numeric_limits<double>::quiet_NaN()));
  out.alpha.assign(k, Eigen::VectorXd::Constant(alpha_dim,
                                                std::numeric_limits<double>::quiet_NaN()));
  const double nan = std::numeric_limits<double>::quiet_NaN();
  out.sigma_sq.assign(k, nan);
  out.tau_sq.assign(k, nan);
  out.tau_lambda_sq.assign(k, nan);
  out.tau_beta_sq.assign(k, nan);
  out.tau_alpha_sq.assign(k, nan);
  for (const Row& row : rows) {
    const std::size_t it = std::size_t(row.it);
    if (row.name == "beta") {
      out.beta[it][Eigen::Index(row.index)] = row.value;
    } else if (row.name == "alpha") {
      out.alpha[it][Eigen::Index(row.index)] = row.value;
    } else if (row.name == "sigma_sq") {
      out.sigma_sq[it] = row.value;
    } else if (row.name == "tau_sq") {
      out.tau_sq[it] = row.value;
    } else if (row.name == "tau_lambda_sq") {
      out.tau_lambda_sq[it] = row.value;
    } else if (row.name == "tau_beta_sq") {
      out.tau_beta_sq[it] = row.value;
    } else if (row.name == "tau_alpha_sq") {
      out.tau_alpha_sq[it] = row.value;
    } else {
      throw ValidationError(draws_path + ": unknown variable '" + row.name +
                            "'");
    }
  }
  auto check_filled = [&](const std::vector<double>& v, const char* name) {
    for (std::size_t it = 0; it < k; ++it)
      if (std::isnan(v[it]))
        throw ValidationError(draws_path + ": missing " + std::string(name) +
                              " at iteration " + std::to_string(it));
  };
  check_filled(out.sigma_sq, "sigma_sq");
  check_filled(out.tau_sq, "tau_sq");
  check_filled(out.tau_lambda_sq, "tau_lambda_sq");
  check_filled(out.tau_beta_sq, "tau_beta_sq");
  check_filled(out.tau_alpha_sq, "tau_alpha_sq");
  for (std::size_t it = 0; it < k; ++it)
    for (Eigen::Index j = 0; j < beta_dim; ++j)
      if (std::isnan(out.beta[it][j]))
        throw ValidationError(draws_path + ": missing beta[" +
                              std::to_string(j) + "] at iteration " +
                              std::to_string(it));
  for (std::size_t it = 0; it < k; ++it)
    for (Eigen::Index j = 0; j < alpha_dim; ++j)
      if (std::isnan(out.alpha[it][j]))
        throw ValidationError(draws_path + ": missing alpha[" +
                              std::to_string(j) + "] at iteration " +
                              std::to_string(it));
  return out;
}

// ---------------------------------------------------------------------------
// run.json: configuration echo plus runtime diagnostics for a fit.

struct RunInfo {
  std::string sampler;  // "joint" or "twostage"
  SamplerConfig config;
  int n_subjects = 0;
  int n_nodes = 0;
  int n_covariates = 0;
  double runtime_seconds = 0.0;
  double imh_acceptance_rate = std::numeric_limits<double>::quiet_NaN();
  int integration_skips = 0;
  std::vector<double> step_size;
  std::vector<double> acceptance;
  std::vector<double> log_joint;
};

inline void write_run_json(const std::string& path, const RunInfo& run) {
  nlohmann::json j;
  j["sampler"] = run.sampler;
  nlohmann::json cfg;
  cfg["iters"] = run.config.iters;
  cfg["burn_in"] = run.config.burn_in;
  cfg["thin"] = run.config.thin;
  cfg["seed"] = std::uint64_t(run.config.seed);
  cfg["q"] = run.config.q;
  nlohmann::json hyper;
  hyper["nu0"] = run.config.hyper.nu0;
  hyper["sigma0_sq"] = run.config.hyper.sigma0_sq;
  hyper["eta0"] = run.config.hyper.eta0;
  hyper["tau0_sq"] = run.config.hyper.tau0_sq;
  hyper["gamma0"] = run.config.hyper.gamma0;
  hyper["kappa0_sq"] = run.config.hyper.kappa0_sq;
  hyper["omega0"] = run.config.hyper.omega0;
  hyper["phi0_sq"] = run.config.hyper.phi0_sq;
  hyper["rho0"] = run.config.hyper.rho0;
  hyper["psi0_sq"] = run.config.hyper.psi0_sq;
  cfg["hyper"] = hyper;
  nlohmann::json mala;
  mala["omega0"] = run.config.mala.omega0;
  mala["rho_target"] = run.config.mala.rho_target;
  mala["k0"] = run.config.mala.k0;
  mala["shrink"] = run.config.mala.shrink;
  mala["grow"] = run.config.mala.grow;
  cfg["mala"] = mala;
  j["config"] = cfg;
  nlohmann::json data;
  data["n_subjects"] = run.n_subjects;
  data["n_nodes"] = run.n_nodes;
  data["n_covariates"] = run.n_covariates;
  j["data"] = data;
  j["runtime_seconds"] = run.runtime_seconds;
  if (std::isnan(run.imh_acceptance_rate))
    j["imh_acceptance_rate"] = nullptr;
  else
    j["imh_acceptance_rate"] = run.imh_acceptance_rate;
  j["integration_skips"] = run.integration_skips;
  nlohmann::json traces;
  traces["step_size"] = run.step_size;
  traces["acceptance"] = run.acceptance;
  traces["log_joint"] = run.log_joint;
  j["traces"] = traces;
  detail::write_text(path, j.dump(2) + "\n");
}

inline RunInfo read_run_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "' for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": invalid JSON: " + e.what());
  }
  RunInfo run;
  try {
    run.sampler = j.at("sampler").get<std::string>();
    const auto& cfg = j.at("config");
    run.config.iters = cfg.at("iters").get<int>();
    run.config.burn_in = cfg.at("burn_in").get<int>();
    run.config.thin = cfg.at("thin").get<int>();
    run.config.seed = cfg.at("seed").get<std::uint64_t>();
    run.config.q = cfg.at("q").get<int>();
    const auto& hyper = cfg.at("hyper");
    run.config.hyper.nu0 = hyper.at("nu0").get<double>();
    run.config.hyper.sigma0_sq = hyper.at("sigma0_sq").get<double>();
    run.config.hyper.eta0 = hyper.at("eta0").get<double>();
    run.config.hyper.tau0_sq = hyper.at("tau0_sq").get<double>();
    run.config.hyper.gamma0 = hyper.at("gamma0").get<double>();
    run.config.hyper.kappa0_sq = hyper.at("kappa0_sq").get<double>();
    run.config.hyper.omega0 = hyper.at("omega0").get<double>();
    run.config.hyper.phi0_sq = hyper.at("phi0_sq").get<double>();
    run.config.hyper.rho0 = hyper.at("rho0").get<double>();
    run.config.hyper.psi0_sq = hyper.at("psi0_sq").get<double>();
    const auto& mala = cfg.at("mala");
    run.config.mala.omega0 = mala.at("omega0").get<double>();
    run.config.mala.rho_target = mala.at("rho_target").get<double>();
    run.config.mala.k0 = mala.at("k0").get<int>();
    run.config.mala.shrink = mala.at("shrink").get<double>();
    run.config.mala.grow = mala.at("grow").get<double>();
    const auto& data = j.at("data");
    run.n_subjects = data.at("n_subjects").get<int>();
    run.n_nodes = data.at("n_nodes").get<int>();
    run.n_covariates = data.at("n_covariates").get<int>();
    run.runtime_seconds = j.at("runtime_seconds").get<double>();
    if (j.at("imh_acceptance_rate").is_null())
      run.imh_acceptance_rate = std::numeric_limits<double>::quiet_NaN();
    else
      run.imh_acceptance_rate = j.at("imh_acceptance_rate").get<double>();
    run.integration_skips = j.at("integration_skips").get<int>();
    const auto& traces = j.at("traces");
    run.step_size = traces.at("step_size").get<std::vector<double>>();
    run.acceptance = traces.at("acceptance").get<std::vector<double>>();
    run.log_joint = traces.at("log_joint").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": missing or malformed field: " + e.what());
  }
  return run;
}

// ---------------------------------------------------------------------------
// predictions.csv (+ optional per-draw sample matrix)

inline void write_predictions_csv(const std::string& path,
                                  const std::vector<std::string>& subject_ids,
                                  const Predictions& pred) {
  if (Eigen::Index(subject_ids.size()) != pred.point.size())
    throw DimensionError("subject id count does not match prediction count");
  std::ostringstream out;
  out << "subject_id,prediction,predictive_sd\n";
  for (std::size_t i = 0; i < subject_ids.size(); ++i)
    out << subject_ids[i] << ',' << format_real(pred.point[Eigen::Index(i)])
        << ',' << format_real(pred.sd[Eigen::Index(i)]) << '\n';
  detail::write_text(path, out.str());
}

struct PredictionsFile {
  std::vector<std::string> subject_ids;
  Eigen::VectorXd point;
  Eigen::VectorXd sd;
};

inline PredictionsFile read_predictions_csv(const std::string& path) {
  const auto lines = detail::read_lines(path);
  if (lines.size() < 2)
    throw ValidationError(path + ": expected a header and at least one row");
  if (detail::trim(lines[0]) != "subject_id,prediction,predictive_sd")
    throw ValidationError(path +
                          ": header must be subject_id,prediction,"
                          "predictive_sd");
  PredictionsFile out;
  const std::size_t m = lines.size() - 1;
  out.point.resize(m);
  out.sd.resize(m);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = detail::split_csv(lines[i]);
    if (cells.size() != 3)
      throw ValidationError(path + ":" + std::to_string(i + 1) +
                            ": expected 3 fields");
    out.subject_ids.push_back(detail::trim(cells[0]));
    out.point[Eigen::Index(i - 1)] =
        detail::parse_double(cells[1], path, int(i + 1));
    out.sd[Eigen::Index(i - 1)] =
        detail::parse_double(cells[2], path, int(i + 1));
  }
  return out;
}

// One column per test subject, one row per retained draw.
inline void write_prediction_samples_csv(
    const std::string& path, const std::vector<std::string>& subject_ids,
    const Predictions& pred) {
  if (Eigen::Index(subject_ids.size()) != pred.samples.cols())
    throw DimensionError("subject id count does not match sample columns");
  std::ostringstream out;
  bool first = true;
  for (const std::string& id : subject_ids) {
    if (!first) out << ',';
    out << id;
    first = false;
  }
  out << '\n';
  for (Eigen::Index k = 0; k < pred.samples.rows(); ++k) {
    for (Eigen::Index i = 0; i < pred.samples.cols(); ++i) {
      if (i) out << ',';
      out << format_real(pred.samples(k, i));
    }
    out << '\n';
  }
  detail::write_text(path, out.str());
}

// ---------------------------------------------------------------------------
// cv_results.csv

inline void write_cv_results_csv(const std::string& path,
                                 const CvResult& result) {
  std::ostringstream out;
  out << "repeat,fold,r2,n_test,median,iqr\n";
  for (const CvRow& row : result.rows)
    out << row.repeat << ',' << row.fold << ',' << format_real(row.r2) << ','
        << row.n_test << ",,\n";
  out << "summary,,,," << format_real(result.median) << ','
      << format_real(result.iqr) << '\n';
  detail::write_text(path, out.str());
}

inline CvResult read_cv_results_csv(const std::string& path) {
  const auto lines = detail::read_lines(path);
  if (lines.size() < 2)
    throw ValidationError(path + ": expected a header and a summary row");
  if (detail::trim(lines[0]) != "repeat,fold,r2,n_test,median,iqr")
    throw ValidationError(path +
                          ": header must be repeat,fold,r2,n_test,median,iqr");
  CvResult out;
  bool saw_summary = false;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = detail::split_csv(lines[i]);
    if (cells.size() != 6)
      throw ValidationError(path + ":" + std::to_string(i + 1) +
                            ": expected 6 fields");
    if (detail::trim(cells[0]) == "summary") {
      if (saw_summary)
        throw ValidationError(path + ": multiple summary rows");
      out.median = detail::parse_double(cells[4], path, int(i + 1));
      out.iqr = detail::parse_double(cells[5], path, int(i + 1));
      saw_summary = true;
      continue;
    }
    if (saw_summary)
      throw ValidationError(path + ": data row after the summary row");
    CvRow row;
    row.repeat = int(detail::parse_int(cells[0], path, int(i + 1)));
    row.fold = int(detail::parse_int(cells[1], path, int(i + 1)));
    row.r2 = detail::parse_double(cells[2], path, int(i + 1));
    row.n_test = int(detail::parse_int(cells[3], path, int(i + 1)));
    out.rows.push_back(row);
  }
  if (!saw_summary)
    throw ValidationError(path + ": missing summary row");
  return out;
}

// ---------------------------------------------------------------------------
// Generic labeled matrix/vector CSVs for simulator ground truth.

inline void write_matrix_csv(const std::string& path,
                             const Eigen::MatrixXd& m) {
  std::ostringstream out;
  for (Eigen::Index a = 0; a < m.rows(); ++a) {
    for (Eigen::Index b = 0; b < m.cols(); ++b) {
      if (b) out << ',';
      out << format_real(m(a, b));
    }
    out << '\n';
  }
  detail::write_text(path, out.str());
}

inline Eigen::MatrixXd read_matrix_csv(const std::string& path) {
  const auto lines = detail::read_lines(path);
  if (lines.empty()) throw ValidationError(path + ": empty matrix file");
  const std::size_t cols = detail::split_csv(lines[0]).size();
  Eigen::MatrixXd m(lines.size(), cols);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto cells = detail::split_csv(lines[i]);
    if (cells.size() != cols)
      throw ValidationError(path + ":" + std::to_string(i + 1) +
                            ": ragged row");
    for (std::size_t j = 0; j < cols; ++j)
      m(Eigen::Index(i), Eigen::Index(j)) =
          detail::parse_double(cells[j], path, int(i + 1));
  }
  return m;
}

// params.json: scalar ground truth and coefficient vectors for a simulated
// dataset.
inline void write_truth_params_json(const std::string& path,
                                    const GroundTruth& truth) {
  nlohmann::json j;
  j["sigma_sq"] = truth.sigma_sq_true;
  j["tau_sq"] = truth.tau_sq_true;
  j["beta"] = std::vector<double>(truth.beta_true.begin(),
                                  truth.beta_true.end());
  j["alpha"] = std::vector<double>(truth.alpha_true.begin(),
                                   truth.alpha_true.end());
  j["edge_var"] = std::vector<double>(truth.edge_var_true.begin(),
                                      truth.edge_var_true.end());
  detail::write_text(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Flat key = value configuration files.
//
// Grammar: one `key = value` per line; `#` starts a comment; keys are bare
// words, optionally dotted (mala.k0); values are booleans (true/false),
// numbers (inf accepted), double-quoted strings, or [a, b, c] arrays of
// numbers.  Unknown keys are rejected when the map is bound to a config
// struct so typos fail loudly instead of silently running defaults.

struct ConfigValue {
  enum class Kind { kBool, kNumber, kString, kNumberList };
  Kind kind = Kind::kNumber;
  bool boolean = false;
  double number = 0.0;
  std::string raw;  // original token, used for exact integer parsing
  std::string text;
  std::vector<double> list;
  int line = 0;
};

using ConfigMap = std::map<std::string, ConfigValue>;

namespace detail {

inline bool valid_config_key(const std::string& key) {
  if (key.empty() || key.front() == '.' || key.back() == '.') return false;
  bool prev_dot = false;
  for (char c : key) {
    if (c == '.') {
      if (prev_dot) return false;
      prev_dot = true;
      continue;
    }
    prev_dot = false;
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_'))
      return false;
  }
  return true;
}

inline double parse_config_number(const std::string& tok,
                                  const std::string& context, int line_no) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (tok.empty() || end != tok.c_str() + tok.size())
    throw ValidationError(context + ":" + std::to_string(line_no) +
                          ": cannot parse '" + tok + "' as a number");
  return v;
}

}  // namespace detail

inline ConfigMap parse_config_text(const std::string& text,
                                   const std::string& context = "config") {
  ConfigMap out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    // Strip comments, respecting quoted strings.
    bool in_quote = false;
    std::string body;
    for (char c : line) {
      if (c == '"') in_quote = !in_quote;
      if (c == '#' && !in_quote) break;
      body.push_back(c);
    }
    body = detail::trim(body);
    if (body.empty()) continue;
    const std::size_t eq = body.find('=');
    if (eq == std::string::npos)
      throw ValidationError(context + ":" + std::to_string(line_no) +
                            ": expected key = value");
    const std::string key = detail::trim(body.substr(0, eq));
    const std::string val = detail::trim(body.substr(eq + 1));
    if (!detail::valid_config_key(key))
      throw ValidationError(context + ":" + std::to_string(line_no) +
                            ": invalid key '" + key + "'");
    if (out.count(key))
      throw ValidationError(context + ":" + std::to_string(line_no) +
                            ": duplicate key '" + key + "'");
    if (val.empty())
      throw ValidationError(context + ":" + std::to_string(line_no) +
                            ": missing value for '" + key + "'");
    ConfigValue cv;
    cv.line = line_no;
    cv.raw = val;
    if (val == "true" || val == "false") {
      cv.kind = ConfigValue::Kind::kBool;
      cv.boolean = (val == "true");
    } else if (val.front() == '"') {
      if (val.size() < 2 || val.back() != '"' ||
          val.find('"', 1) != val.size() - 1)
        throw ValidationError(context + ":" + std::to_string(line_no) +
                              ": malformed string value");
      cv.kind = ConfigValue::Kind::kString;
      cv.text = val.substr(1, val.size() - 2);
    } else if (val.front() == '[') {
      if (val.back() != ']')
        throw ValidationError(context + ":" + std::to_string(line_no) +
                              ": unterminated array");
      cv.kind = ConfigValue::Kind::kNumberList;
      const std::string inner = detail::trim(val.substr(1, val.size() - 2));
      if (!inner.empty()) {
        for (const std::string& tok : detail::split_csv(inner))
          cv.list.push_back(detail::parse_config_number(detail::trim(tok),
                                                        context, line_no));
      }
    } else {
      cv.kind = ConfigValue::Kind::kNumber;
      cv.number = detail::parse_config_number(val, context, line_no);
    }
    out.emplace(key, std::move(cv));
  }
  return out;
}

inline ConfigMap read_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

namespace detail {

inline double config_double(const ConfigValue& v, const std::string& key,
                            const std::string& context) {
  if (v.kind != ConfigValue::Kind::kNumber)
    throw ConfigurationError(context + ": '" + key + "' must be a number");
  return v.number;
}

inline int config_int(const ConfigValue& v, const std::string& key,
                      const std::string& context) {
  const double d = config_double(v, key, context);
  if (!std::isfinite(d) || d != std::floor(d) || std::abs(d) > 2147483647.0)
    throw ConfigurationError(context + ": '" + key + "' must be an integer");
  return int(d);
}

inline std::uint64_t config_u64(const ConfigValue& v, const std::string& key,
                                const std::string& context) {
  if (v.kind != ConfigValue::Kind::kNumber)
    throw ConfigurationError(context + ": '" + key + "' must be a number");
  const std::string& tok = v.raw;
  for (char c : tok)
    if (!std::isdigit(static_cast<unsigned char>(c)))
      throw ConfigurationError(context + ": '" + key +
                               "' must be a non-negative integer");
  errno = 0;
  char* end = nullptr;
  const unsigned long long u = std::strtoull(tok.c_str(), &end, 10);
  if (end != tok.c_str() + tok.size() || errno == ERANGE)
    throw ConfigurationError(context + ": '" + key +
                             "' is out of range for a 64-bit seed");
  return std::uint64_t(u);
}

inline bool config_bool(const ConfigValue& v, const std::string& key,
                        const std::string& context) {
  if (v.kind != ConfigValue::Kind::kBool)
    throw ConfigurationError(context + ": '" + key + "' must be true/false");
  return v.boolean;
}

inline Eigen::VectorXd config_vector(const ConfigValue& v,
                                     const std::string& key,
                                     const std::string& context) {
  if (v.kind != ConfigValue::Kind::kNumberList)
    throw ConfigurationError(context + ": '" + key +
                             "' must be an array like [1, -1, 0.5]");
  Eigen::VectorXd out(v.list.size());
  for (std::size_t i = 0; i < v.list.size(); ++i)
    out[Eigen::Index(i)] = v.list[i];
  return out;
}

}  // namespace detail

// Binds sampler settings.  `mala.omega0` names the proposal step scale; the
// bare `omega0` key is the alpha-precision hyperparameter, matching the
// struct fields they fill.
inline void apply_sampler_config(const ConfigMap& map, SamplerConfig& config,
                                 const std::string& context = "config") {
  for (const auto& [key, value] : map) {
    if (key == "iters") {
      config.iters = detail::config_int(value, key, context);
    } else if (key == "burn_in") {
      config.burn_in = detail::config_int(value, key, context);
    } else if (key == "thin") {
      config.thin = detail::config_int(value, key, context);
    } else if (key == "seed") {
      config.seed = detail::config_u64(value, key, context);
    } else if (key == "q") {
      config.q = detail::config_int(value, key, context);
    } else if (key == "nu0") {
      config.hyper.nu0 = detail::config_double(value, key, context);
    } else if (key == "sigma0_sq") {
      config.hyper.sigma0_sq = detail::config_double(value, key, context);
    } else if (key == "eta0") {
      config.hyper.eta0 = detail::config_double(value, key, context);
    } else if (key == "tau0_sq") {
      config.hyper.tau0_sq = detail::config_double(value, key, context);
    } else if (key == "gamma0") {
      config.hyper.gamma0 = detail::config_double(value, key, context);
    } else if (key == "kappa0_sq") {
      config.hyper.kappa0_sq = detail::config_double(value, key, context);
    } else if (key == "omega0") {
      config.hyper.omega0 = detail::config_double(value, key, context);
    } else if (key == "phi0_sq") {
      config.hyper.phi0_sq = detail::config_double(value, key, context);
    } else if (key == "rho0") {
      config.hyper.rho0 = detail::config_double(value, key, context);
    } else if (key == "psi0_sq") {
      config.hyper.psi0_sq = detail::config_double(value, key, context);
    } else if (key == "mala.omega0") {
      config.mala.omega0 = detail::config_double(value, key, context);
    } else if (key == "mala.rho_target") {
      config.mala.rho_target = detail::config_double(value, key, context);
    } else if (key == "mala.k0") {
      config.mala.k0 = detail::config_int(value, key, context);
    } else if (key == "mala.shrink") {
      config.mala.shrink = detail::config_double(value, key, context);
    } else if (key == "mala.grow") {
      config.mala.grow = detail::config_double(value, key, context);
    } else {
      throw ConfigurationError(context + ": unknown sampler setting '" + key +
                               "'");
    }
  }
}

inline void apply_sim_config(const ConfigMap& map, SimConfig& config,
                             const std::string& context = "config") {
  for (const auto& [key, value] : map) {
    if (key == "n_nodes") {
      config.n_nodes = detail::config_int(value, key, context);
    } else if (key == "q") {
      config.q = detail::config_int(value, key, context);
    } else if (key == "n_subjects") {
      config.n_subjects = detail::config_int(value, key, context);
    } else if (key == "snr_y") {
      config.snr_y = detail::config_double(value, key, context);
    } else if (key == "snr_c") {
      config.snr_c = detail::config_double(value, key, context);
    } else if (key == "lambda_rate") {
      config.lambda_rate = detail::config_double(value, key, context);
    } else if (key == "beta_true") {
      config.beta_true = detail::config_vector(value, key, context);
    } else if (key == "alpha_true") {
      config.alpha_true = detail::config_vector(value, key, context);
    } else if (key == "n_continuous") {
      config.n_continuous = detail::config_int(value, key, context);
    } else if (key == "n_binary") {
      config.n_binary = detail::config_int(value, key, context);
    } else if (key == "heteroscedastic") {
      config.heteroscedastic = detail::config_bool(value, key, context);
    } else if (key == "noise_dispersion") {
      config.noise_dispersion = detail::config_double(value, key, context);
    } else if (key == "seed") {
      config.seed = detail::config_u64(value, key, context);
    } else {
      throw ConfigurationError(context + ": unknown simulation setting '" +
                               key + "'");
    }
  }
}

}  // namespace bsnmani
