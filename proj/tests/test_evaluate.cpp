#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "bsnmani/data.hpp"
#include "bsnmani/errors.hpp"
#include "bsnmani/evaluate.hpp"
#include "bsnmani/sampler.hpp"
#include "bsnmani/simulate.hpp"
#include "bsnmani/stiefel.hpp"
#include "helpers.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using bsnmani::Dataset;
using bsnmani::PosteriorDraws;
using bsnmani::PredictConfig;
using bsnmani::SamplerConfig;
using bsnmani::SymmetricNetwork;

namespace {

MatrixXd random_stiefel(int n, int q, std::mt19937_64& eng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  MatrixXd x(n, q);
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < q; ++b) x(a, b) = gauss(eng);
  }
  return bsnmani::polar_expand(bsnmani::EuclideanPoint(x)).matrix();
}

std::vector<SymmetricNetwork> planted_networks(const MatrixXd& u,
                                               const MatrixXd& lam,
                                               double edge_sd,
                                               std::mt19937_64& eng) {
  std::normal_distribution<double> gauss(0.0, edge_sd);
  std::vector<SymmetricNetwork> nets;
  const int n = static_cast<int>(u.rows());
  for (Eigen::Index i = 0; i < lam.rows(); ++i) {
    MatrixXd y = u * lam.row(i).transpose().asDiagonal() * u.transpose();
    if (edge_sd > 0.0) {
      for (int a = 1; a < n; ++a) {
        for (int b = 0; b < a; ++b) {
          const double e = gauss(eng);
          y(a, b) += e;
          y(b, a) += e;
        }
      }
    }
    y.diagonal().setZero();
    nets.push_back(SymmetricNetwork::from_dense(y));
  }
  return nets;
}

// Hand-assembled posterior draws around a fixed frame, for RNG-free checks.
PosteriorDraws manual_draws(const MatrixXd& u, int m, int r,
                            std::mt19937_64& eng, int k = 5) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int q = static_cast<int>(u.cols());
  PosteriorDraws draws;
  for (int j = 0; j < k; ++j) {
    draws.u.push_back(u);
    MatrixXd lam(m, q);
    for (int i = 0; i < m; ++i) {
      for (int l = 0; l < q; ++l) lam(i, l) = gauss(eng);
    }
    draws.lambdas.push_back(lam);
    VectorXd beta(q);
    for (int l = 0; l < q; ++l) beta[l] = gauss(eng);
    draws.beta.push_back(beta);
    VectorXd alpha(r);
    for (int l = 0; l < r; ++l) alpha[l] = gauss(eng);
    draws.alpha.push_back(alpha);
    draws.sigma_sq.push_back(0.5 + 0.1 * j);
    draws.tau_sq.push_back(0.3);
    draws.tau_lambda_sq.push_back(1.0 + 0.2 * j);
    draws.tau_beta_sq.push_back(1.0);
    draws.tau_alpha_sq.push_back(1.0);
  }
  return draws;
}

}  // namespace

TEST_CASE("predictive r2 matches hand arithmetic", "[evaluate]") {
  VectorXd truths(3), preds(3);
  truths << 1.0, 2.0, 3.0;
  preds << 1.0, 2.0, 4.0;
  CHECK(bsnmani::predictive_r2(preds, truths) == Catch::Approx(0.5));

  CHECK(bsnmani::predictive_r2(truths, truths) == 1.0);
  const VectorXd at_mean = VectorXd::Constant(3, 2.0);
  CHECK(bsnmani::predictive_r2(at_mean, truths) == Catch::Approx(0.0).margin(1e-15));

  CHECK_THROWS_AS(bsnmani::predictive_r2(preds, VectorXd::Constant(3, 1.0)),
                  bsnmani::UndefinedMetricError);
  CHECK_THROWS_AS(bsnmani::predictive_r2(VectorXd::Zero(2), truths),
                  bsnmani::DimensionError);
  CHECK_THROWS_AS(bsnmani::predictive_r2(VectorXd::Zero(1), VectorXd::Zero(1)),
                  bsnmani::DimensionError);
}

TEST_CASE("predictive r2 is invariant under a common affine map", "[evaluate]") {
  auto eng = testutil::engine(5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  VectorXd truths(40), preds(40);
  for (int i = 0; i < 40; ++i) {
    truths[i] = gauss(eng);
    preds[i] = truths[i] + 0.3 * gauss(eng);
  }
  const double base = bsnmani::predictive_r2(preds, truths);
  const double a = 3.0;
  const double b = -2.5;
  const VectorXd t2 = (a + (b * truths).array()).matrix();
  const VectorXd p2 = (a + (b * preds).array()).matrix();
  CHECK(bsnmani::predictive_r2(p2, t2) == Catch::Approx(base).epsilon(1e-12));
}

TEST_CASE("subspace distance behaves like a projector metric", "[evaluate]") {
  auto eng = testutil::engine(7);
  const MatrixXd u = random_stiefel(9, 2, eng);
  CHECK(bsnmani::subspace_distance(u, u) == 0.0);

  MatrixXd e1 = MatrixXd::Zero(4, 1);
  MatrixXd e2 = MatrixXd::Zero(4, 1);
  e1(0, 0) = 1.0;
  e2(1, 0) = 1.0;
  CHECK(bsnmani::subspace_distance(e1, e2) == Catch::Approx(std::sqrt(2.0)));

  // Rotation within the span leaves the projector unchanged.
  const double theta = 0.73;
  MatrixXd rot(2, 2);
  rot << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  CHECK(bsnmani::subspace_distance(u, u * rot) < 1e-10);

  // Pseudometric properties on random triples.
  for (int rep = 0; rep < 10; ++rep) {
    const MatrixXd a = random_stiefel(7, 2, eng);
    const MatrixXd b = random_stiefel(7, 2, eng);
    const MatrixXd c = random_stiefel(7, 2, eng);
    const double ab = bsnmani::subspace_distance(a, b);
    const double ba = bsnmani::subspace_distance(b, a);
    CHECK(ab == Catch::Approx(ba).epsilon(1e-12));
    CHECK(ab <= bsnmani::subspace_distance(a, c) +
                    bsnmani::subspace_distance(c, b) + 1e-12);
  }

  CHECK_THROWS_AS(bsnmani::subspace_distance(e1, MatrixXd::Zero(5, 1)),
                  bsnmani::DimensionError);
}

TEST_CASE("point predictions are invariant under the column symmetry",
          "[evaluate]") {
  auto eng = testutil::engine(11);
  const int n = 7;
  const int q = 3;
  const int m_test = 6;
  const MatrixXd u = random_stiefel(n, q, eng);
  PosteriorDraws draws = manual_draws(u, 10, 2, eng);

  MatrixXd lam_test(m_test, q);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < m_test; ++i) {
    for (int l = 0; l < q; ++l) lam_test(i, l) = gauss(eng);
  }
  const auto nets = planted_networks(u, lam_test, 0.2, eng);
  MatrixXd z(m_test, 2);
  for (int i = 0; i < m_test; ++i) {
    z(i, 0) = gauss(eng);
    z(i, 1) = gauss(eng);
  }

  PredictConfig pcfg;
  pcfg.seed = 13;
  const auto base = bsnmani::predict(draws, nets, z, pcfg);

  // Apply the model symmetry to every draw: permute columns of (U, lambda,
  // beta) together and flip signs on U columns alone.
  MatrixXd perm = MatrixXd::Zero(q, q);
  perm(0, 2) = 1.0;
  perm(1, 0) = 1.0;
  perm(2, 1) = 1.0;
  Eigen::Vector3d signs(1.0, -1.0, -1.0);
  PosteriorDraws mapped = draws;
  for (std::size_t j = 0; j < mapped.u.size(); ++j) {
    mapped.u[j] = draws.u[j] * perm * signs.asDiagonal();
    mapped.lambdas[j] = draws.lambdas[j] * perm;
    mapped.beta[j] = perm.transpose() * draws.beta[j];
  }
  const auto moved = bsnmani::predict(mapped, nets, z, pcfg);
  CHECK((moved.point - base.point).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("degenerate prediction inputs reduce to the covariate term",
          "[evaluate]") {
  auto eng = testutil::engine(17);
  const MatrixXd u = random_stiefel(6, 2, eng);
  PosteriorDraws draws = manual_draws(u, 8, 1, eng);

  MatrixXd z(4, 1);
  z << 0.5, -1.0, 2.0, 0.0;
  std::vector<SymmetricNetwork> zero_nets(
      4, SymmetricNetwork::from_dense(MatrixXd::Zero(6, 6)));

  SECTION("beta pinned to zero ignores the networks") {
    for (auto& b : draws.beta) b.setZero();
    MatrixXd lam_test(4, 2);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < 4; ++i) {
      lam_test(i, 0) = gauss(eng);
      lam_test(i, 1) = gauss(eng);
    }
    const auto nets = planted_networks(u, lam_test, 0.1, eng);
    const auto pred = bsnmani::predict(draws, nets, z);
    VectorXd want = VectorXd::Zero(4);
    for (const auto& a : draws.alpha) want += z * a;
    want /= static_cast<double>(draws.n_draws());
    CHECK((pred.point - want).cwiseAbs().maxCoeff() < 1e-14);
  }

  SECTION("zero networks center the loading conditional at zero") {
    const auto pred = bsnmani::predict(draws, zero_nets, z);
    VectorXd want = VectorXd::Zero(4);
    for (const auto& a : draws.alpha) want += z * a;
    want /= static_cast<double>(draws.n_draws());
    CHECK((pred.point - want).cwiseAbs().maxCoeff() < 1e-14);
  }

  SECTION("outcome-noise flag widens samples but not the point value") {
    for (auto& b : draws.beta) b.setZero();
    for (auto& t : draws.tau_sq) t = 100.0;
    for (auto& a : draws.alpha) a.setZero();
    PredictConfig quiet;
    quiet.seed = 3;
    const auto without = bsnmani::predict(draws, zero_nets, z, quiet);
    PredictConfig noisy = quiet;
    noisy.sample_noise = true;
    const auto with = bsnmani::predict(draws, zero_nets, z, noisy);
    CHECK(without.sd.maxCoeff() == 0.0);
    CHECK(with.sd.minCoeff() > 1.0);
    CHECK((with.point - without.point).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("prediction inputs are validated", "[evaluate]") {
  auto eng = testutil::engine(19);
  const MatrixXd u = random_stiefel(6, 2, eng);
  const PosteriorDraws draws = manual_draws(u, 8, 1, eng);

  std::vector<SymmetricNetwork> wrong_n(
      2, SymmetricNetwork::from_dense(MatrixXd::Zero(5, 5)));
  CHECK_THROWS_AS(bsnmani::predict(draws, wrong_n, MatrixXd::Zero(2, 1)),
                  bsnmani::DimensionError);

  std::vector<SymmetricNetwork> ok(
      2, SymmetricNetwork::from_dense(MatrixXd::Zero(6, 6)));
  CHECK_THROWS_AS(bsnmani::predict(draws, ok, MatrixXd::Zero(3, 1)),
                  bsnmani::DimensionError);
  CHECK_THROWS_AS(bsnmani::predict(draws, ok, MatrixXd::Zero(2, 4)),
                  bsnmani::DimensionError);
  CHECK_THROWS_AS(bsnmani::predict(PosteriorDraws{}, ok, MatrixXd::Zero(2, 1)),
                  bsnmani::ConfigurationError);
}

TEST_CASE("prediction on a training subject matches its fitted mean",
          "[evaluate]") {
  auto eng = testutil::engine(23);
  const MatrixXd u = bsnmani::make_block_u(6, 1).matrix();
  const int m = 20;
  MatrixXd lam(m, 1);
  std::exponential_distribution<double> expo(1.0);
  for (int i = 0; i < m; ++i) lam(i, 0) = expo(eng);
  const auto nets = planted_networks(u, lam, 0.0, eng);
  std::normal_distribution<double> gauss(0.0, 1.0);
  VectorXd c(m);
  MatrixXd z(m, 1);
  for (int i = 0; i < m; ++i) {
    z(i, 0) = gauss(eng);
    c[i] = lam(i, 0) + 0.5 * z(i, 0) + 0.1 * gauss(eng);
  }
  const Dataset ds(nets, c, z);

  SamplerConfig cfg;
  cfg.q = 1;
  cfg.iters = 1500;
  cfg.burn_in = 500;
  cfg.seed = 29;
  const PosteriorDraws draws = bsnmani::run_joint(ds, cfg);

  PredictConfig pcfg;
  pcfg.seed = 31;
  const auto pred = bsnmani::predict(draws, ds, pcfg);

  for (int i = 0; i < m; ++i) {
    double fitted = 0.0;
    for (int j = 0; j < draws.n_draws(); ++j) {
      const auto js = static_cast<std::size_t>(j);
      fitted += draws.beta[js].dot(draws.lambdas[js].row(i).transpose()) +
                draws.alpha[js].dot(z.row(i).transpose());
    }
    fitted /= static_cast<double>(draws.n_draws());
    CHECK(pred.point[i] == Catch::Approx(fitted).margin(0.05));
  }
}

TEST_CASE("parameter rmse is zero at truth and alignment-invariant",
          "[evaluate]") {
  bsnmani::SimConfig scfg;
  scfg.n_nodes = 8;
  scfg.q = 2;
  scfg.n_subjects = 10;
  scfg.seed = 37;
  const auto sim = bsnmani::generate(scfg);
  const auto& truth = sim.truth;

  PosteriorDraws at_truth;
  for (int j = 0; j < 4; ++j) {
    at_truth.u.push_back(truth.u_true.matrix());
    at_truth.lambdas.push_back(truth.lambdas_true);
    at_truth.beta.push_back(truth.beta_true);
    at_truth.alpha.push_back(truth.alpha_true);
    at_truth.sigma_sq.push_back(truth.sigma_sq_true);
    at_truth.tau_sq.push_back(truth.tau_sq_true);
    at_truth.tau_lambda_sq.push_back(1.0);
    at_truth.tau_beta_sq.push_back(1.0);
    at_truth.tau_alpha_sq.push_back(1.0);
  }
  const auto zero = bsnmani::param_rmse(at_truth, truth);
  CHECK(zero.u == 0.0);
  CHECK(zero.lambda == 0.0);
  CHECK(zero.d == 0.0);
  CHECK(zero.sigma_sq == 0.0);
  CHECK(zero.tau_sq == 0.0);

  // Perturb, then hide the perturbed draws behind a sign flip and a column
  // swap; align_draws must undo the relabeling so the rmse is unchanged.
  auto eng = testutil::engine(41);
  std::normal_distribution<double> gauss(0.0, 0.05);
  PosteriorDraws noisy = at_truth;
  for (std::size_t j = 0; j < noisy.u.size(); ++j) {
    for (int a = 0; a < noisy.lambdas[j].rows(); ++a) {
      noisy.lambdas[j](a, 0) += gauss(eng);
      noisy.lambdas[j](a, 1) += gauss(eng);
    }
    noisy.beta[j][0] += gauss(eng);
  }
  const auto base = bsnmani::param_rmse(noisy, truth);

  MatrixXd perm(2, 2);
  perm << 0.0, 1.0, 1.0, 0.0;
  Eigen::Vector2d signs(-1.0, 1.0);
  PosteriorDraws relabeled = noisy;
  for (std::size_t j = 0; j < relabeled.u.size(); ++j) {
    relabeled.u[j] = noisy.u[j] * perm * signs.asDiagonal();
    relabeled.lambdas[j] = noisy.lambdas[j] * perm;
    relabeled.beta[j] = perm.transpose() * noisy.beta[j];
  }
  bsnmani::align_draws(relabeled, truth.u_true.matrix());
  const auto back = bsnmani::param_rmse(relabeled, truth);
  CHECK(back.u == Catch::Approx(base.u).epsilon(1e-12));
  CHECK(back.lambda == Catch::Approx(base.lambda).epsilon(1e-12));
  CHECK(back.d == Catch::Approx(base.d).epsilon(1e-12));

  PosteriorDraws wrong = at_truth;
  for (auto& b : wrong.beta) b = VectorXd::Zero(5);
  CHECK_THROWS_AS(bsnmani::param_rmse(wrong, truth), bsnmani::DimensionError);
}

TEST_CASE("fold assignments are deterministic and balanced", "[evaluate]") {
  const auto a = bsnmani::fold_assignments(23, 5, 99);
  const auto b = bsnmani::fold_assignments(23, 5, 99);
  CHECK(a == b);
  const auto c = bsnmani::fold_assignments(23, 5, 100);
  CHECK(a != c);

  std::vector<int> count(5, 0);
  for (int f : a) {
    REQUIRE((f >= 0 && f < 5));
    ++count[static_cast<std::size_t>(f)];
  }
  for (int n : count) CHECK((n == 4 || n == 5));

  CHECK_THROWS_AS(bsnmani::fold_assignments(10, 1, 3),
                  bsnmani::ConfigurationError);
  CHECK_THROWS_AS(bsnmani::fold_assignments(4, 5, 3),
                  bsnmani::ConfigurationError);
}

TEST_CASE("cross-validation emits a deterministic score table", "[evaluate]") {
  bsnmani::SimConfig scfg;
  scfg.n_nodes = 8;
  scfg.q = 1;
  scfg.n_subjects = 12;
  scfg.snr_y = 4.0;
  scfg.snr_c = 4.0;
  scfg.seed = 43;
  const auto sim = bsnmani::generate(scfg);

  SamplerConfig cfg;
  cfg.q = 1;
  cfg.iters = 300;
  cfg.burn_in = 150;
  cfg.seed = 47;

  const auto res = bsnmani::cross_validate(sim.data, 3, 2, cfg,
                                           bsnmani::SamplerKind::kJoint);
  // 3 per-fold rows + 1 pooled row per repeat.
  REQUIRE(res.rows.size() == 8);
  int pooled_rows = 0;
  for (const auto& row : res.rows) {
    if (row.fold == -1) {
      ++pooled_rows;
      CHECK(row.n_test == 12);
    } else {
      CHECK(row.n_test == 4);
    }
    CHECK(std::isfinite(row.r2));
  }
  CHECK(pooled_rows == 2);

  const auto again = bsnmani::cross_validate(sim.data, 3, 2, cfg,
                                             bsnmani::SamplerKind::kJoint);
  REQUIRE(again.rows.size() == res.rows.size());
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    CHECK(again.rows[i].repeat == res.rows[i].repeat);
    CHECK(again.rows[i].fold == res.rows[i].fold);
    CHECK(again.rows[i].r2 == res.rows[i].r2);
  }
  CHECK(again.median == res.median);
  CHECK(again.iqr == res.iqr);

  CHECK_THROWS_AS(bsnmani::cross_validate(sim.data, 1, 1, cfg,
                                          bsnmani::SamplerKind::kJoint),
                  bsnmani::ConfigurationError);
  CHECK_THROWS_AS(bsnmani::cross_validate(sim.data, 13, 1, cfg,
                                          bsnmani::SamplerKind::kJoint),
                  bsnmani::ConfigurationError);
}

TEST_CASE("leave-one-out pools predictions per repeat", "[evaluate]") {
  bsnmani::SimConfig scfg;
  scfg.n_nodes = 6;
  scfg.q = 1;
  scfg.n_subjects = 6;
  scfg.snr_y = 4.0;
  scfg.seed = 53;
  const auto sim = bsnmani::generate(scfg);

  SamplerConfig cfg;
  cfg.q = 1;
  cfg.iters = 200;
  cfg.burn_in = 100;
  cfg.seed = 59;

  const auto res = bsnmani::cross_validate(sim.data, 6, 1, cfg,
                                           bsnmani::SamplerKind::kJoint);
  REQUIRE(res.rows.size() == 1);
  CHECK(res.rows.front().fold == -1);
  CHECK(res.rows.front().n_test == 6);
  CHECK(std::isfinite(res.median));
  CHECK(res.iqr == 0.0);
}

TEST_CASE("cross-validation agrees with a single split", "[evaluate]") {
  bsnmani::SimConfig scfg;
  scfg.n_nodes = 10;
  scfg.q = 2;
  scfg.n_subjects = 100;
  scfg.snr_y = 3.0;
  scfg.snr_c = 6.0;
  scfg.seed = 61;
  const auto sim = bsnmani::generate(scfg);

  SamplerConfig cfg;
  cfg.q = 2;
  cfg.iters = 1200;
  cfg.burn_in = 400;
  cfg.seed = 67;

  const auto res = bsnmani::cross_validate(sim.data, 5, 2, cfg,
                                           bsnmani::SamplerKind::kJoint);

  std::vector<int> train_idx, test_idx;
  for (int i = 0; i < 80; ++i) train_idx.push_back(i);
  for (int i = 80; i < 100; ++i) test_idx.push_back(i);
  const Dataset train = sim.data.subset(train_idx);
  const Dataset test = sim.data.subset(test_idx);
  const PosteriorDraws draws = bsnmani::run_joint(train, cfg);
  PredictConfig pcfg;
  pcfg.seed = 71;
  const auto pred = bsnmani::predict(draws, test, pcfg);
  const double split_r2 = bsnmani::predictive_r2(pred.point, test.outcomes());

  CHECK(res.median == Catch::Approx(split_r2).margin(0.1));
}
