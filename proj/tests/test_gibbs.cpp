#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>
#include <catch2/catch_amalgamated.hpp>

#include "bsnmani/data.hpp"
#include "bsnmani/gibbs.hpp"
#include "bsnmani/model.hpp"
#include "bsnmani/rng.hpp"
#include "bsnmani/symmetric_network.hpp"
#include "helpers.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using bsnmani::Dataset;
using bsnmani::Hyperparams;
using bsnmani::ModelState;
using bsnmani::RngStream;
using bsnmani::SymmetricNetwork;

namespace {

// Random-but-reproducible instance with q=lambda columns, r covariates.
struct Fixture {
  Dataset data;
  ModelState state;
  Hyperparams hyper;

  static Fixture make(int m, int n, int q, int r, std::uint64_t seed) {
    auto eng = testutil::engine(seed);
    std::vector<SymmetricNetwork> nets;
    VectorXd c(m);
    MatrixXd z(m, r);
    for (int i = 0; i < m; ++i) {
      nets.push_back(
          SymmetricNetwork::from_dense(testutil::random_hollow_symmetric(n, eng)));
      c[i] = testutil::gauss(eng);
      for (int j = 0; j < r; ++j) z(i, j) = testutil::gauss(eng);
    }
    Dataset data(std::move(nets), std::move(c), std::move(z));
    MatrixXd x = testutil::random_matrix(n, q, eng);
    MatrixXd lambdas = testutil::random_matrix(m, q, eng);
    VectorXd beta(q), alpha(r);
    for (int l = 0; l < q; ++l) beta[l] = testutil::gauss(eng);
    for (int l = 0; l < r; ++l) alpha[l] = testutil::gauss(eng);
    ModelState state(std::move(x), std::move(lambdas), 0.7, std::move(beta),
                     std::move(alpha), 0.8, 1.3, 1.1, 0.9);
    return Fixture{std::move(data), std::move(state), Hyperparams{}};
  }
};

}  // namespace

TEST_CASE("lambda conditional matches the pinned two-component instance",
          "[gibbs]") {
  // U's columns are indicators of {1,2} and {3,4} scaled to unit norm, so
  // diag(U'YU) picks out (Y21, Y43) = (2, -4).  With sigma^2 = tau_lambda^2
  // = 1 and beta = 0 the conditional is N((1, -2), I/2).
  const int n = 4;
  MatrixXd u = MatrixXd::Zero(n, 2);
  const double s = 1.0 / std::sqrt(2.0);
  u(0, 0) = s;
  u(1, 0) = s;
  u(2, 1) = s;
  u(3, 1) = s;
  MatrixXd y = MatrixXd::Zero(n, n);
  y(1, 0) = y(0, 1) = 2.0;
  y(3, 2) = y(2, 3) = -4.0;
  const auto net = SymmetricNetwork::from_dense(y);

  const auto cond = bsnmani::lambda_network_conditional(net, u, 1.0, 1.0);
  const VectorXd mean = cond.mean();
  REQUIRE(mean[0] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(mean[1] == Catch::Approx(-2.0).margin(1e-12));
  const MatrixXd cov = cond.precision.inverse();
  REQUIRE(cov(0, 0) == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(cov(1, 1) == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(cov(0, 1) == Catch::Approx(0.0).margin(1e-12));

  // With beta = 0 the clinical term contributes nothing.
  std::vector<SymmetricNetwork> nets{net};
  VectorXd c(1);
  c << 3.0;
  MatrixXd z(1, 1);
  z << 0.5;
  Dataset data(std::move(nets), std::move(c), std::move(z));
  MatrixXd x0 = u;
  MatrixXd lam0 = MatrixXd::Zero(1, 2);
  VectorXd beta0 = VectorXd::Zero(2);
  VectorXd alpha0 = VectorXd::Zero(1);
  ModelState state(std::move(x0), std::move(lam0), 1.0, std::move(beta0),
                   std::move(alpha0), 1.0, 1.0, 1.0, 1.0);
  const auto joint = bsnmani::lambda_joint_conditional(state, data, 0);
  REQUIRE((joint.precision - cond.precision).cwiseAbs().maxCoeff() < 1e-14);
  REQUIRE((joint.natural - cond.natural).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("lambda conditional collapses to the likelihood under a flat prior",
          "[gibbs]") {
  auto eng = testutil::engine(11);
  const int n = 6, q = 3;
  const auto net =
      SymmetricNetwork::from_dense(testutil::random_hollow_symmetric(n, eng));
  const MatrixXd u =
      bsnmani::polar_expand(bsnmani::EuclideanPoint(
                                testutil::random_matrix(n, q, eng)))
          .matrix();
  const double sigma_sq = 0.37;
  const auto cond =
      bsnmani::lambda_network_conditional(net, u, sigma_sq, 1e12);

  VectorXd expected(q);
  for (int l = 0; l < q; ++l) {
    expected[l] = u.col(l).dot(net.dense() * u.col(l));
  }
  const VectorXd mean = cond.mean();
  for (int l = 0; l < q; ++l) {
    REQUIRE(mean[l] == Catch::Approx(expected[l]).epsilon(1e-9));
    REQUIRE(1.0 / cond.precision(l, l) ==
            Catch::Approx(sigma_sq).epsilon(1e-9));
  }
}

TEST_CASE("network-only mean follows the shrinkage formula", "[gibbs]") {
  auto eng = testutil::engine(12);
  const int n = 5, q = 2;
  const auto net =
      SymmetricNetwork::from_dense(testutil::random_hollow_symmetric(n, eng));
  const MatrixXd u =
      bsnmani::polar_expand(bsnmani::EuclideanPoint(
                                testutil::random_matrix(n, q, eng)))
          .matrix();
  const double sigma_sq = 0.7, tau_lambda_sq = 2.3;
  const auto cond =
      bsnmani::lambda_network_conditional(net, u, sigma_sq, tau_lambda_sq);
  const double shrink =
      (1.0 / sigma_sq) / (1.0 / sigma_sq + 1.0 / tau_lambda_sq);
  const VectorXd mean = cond.mean();
  for (int l = 0; l < q; ++l) {
    const double diag_l = u.col(l).dot(net.dense() * u.col(l));
    REQUIRE(mean[l] == Catch::Approx(shrink * diag_l).epsilon(1e-12));
  }
}

TEST_CASE("joint lambda conditional agrees with a grid-quadrature oracle",
          "[gibbs]") {
  // One subject, q = 1.  The oracle evaluates the exact conditional density
  // -- Frobenius network residual x clinical likelihood x prior -- on a grid,
  // never touching the closed-form natural parameters.
  auto eng = testutil::engine(21);
  const int n = 5;
  const auto net =
      SymmetricNetwork::from_dense(testutil::random_hollow_symmetric(n, eng));
  const MatrixXd u =
      bsnmani::polar_expand(bsnmani::EuclideanPoint(
                                testutil::random_matrix(n, 1, eng)))
          .matrix();
  const double sigma_sq = 0.5, tau_sq = 0.8, tau_lambda_sq = 2.0;
  const double beta = 1.5, alpha = -0.4, zval = 1.25, outcome = 3.0;

  std::vector<SymmetricNetwork> nets{net};
  VectorXd c(1);
  c << outcome;
  MatrixXd z(1, 1);
  z << zval;
  Dataset data(std::move(nets), std::move(c), std::move(z));
  MatrixXd x0 = u;
  MatrixXd lam0 = MatrixXd::Zero(1, 1);
  VectorXd beta0(1), alpha0(1);
  beta0 << beta;
  alpha0 << alpha;
  ModelState state(std::move(x0), std::move(lam0), sigma_sq, std::move(beta0),
                   std::move(alpha0), tau_sq, tau_lambda_sq, 1.0, 1.0);

  const MatrixXd ydense = net.dense();
  auto log_density = [&](double lam) {
    const MatrixXd resid = ydense - lam * (u * u.transpose());
    const double cres = outcome - beta * lam - alpha * zval;
    return -resid.squaredNorm() / (2.0 * sigma_sq) -
           cres * cres / (2.0 * tau_sq) - lam * lam / (2.0 * tau_lambda_sq);
  };
  const auto oracle = testutil::grid_moments(log_density, -20.0, 20.0, 40001);

  const auto cond = bsnmani::lambda_joint_conditional(state, data, 0);
  REQUIRE(cond.mean()[0] == Catch::Approx(oracle.mean).epsilon(1e-6));
  REQUIRE(1.0 / cond.precision(0, 0) ==
          Catch::Approx(oracle.var).epsilon(1e-6));

  RngStream rng(999);
  const int draws = 100000;
  VectorXd samples(draws);
  for (int t = 0; t < draws; ++t) {
    samples[t] = bsnmani::update_lambda_joint(0, state, data, rng)[0];
  }
  REQUIRE(testutil::sample_mean(samples) ==
          Catch::Approx(oracle.mean).epsilon(0.01));
  REQUIRE(testutil::sample_var(samples) ==
          Catch::Approx(oracle.var).epsilon(0.01));
}

TEST_CASE("joint conditional reduces to network-only as clinical precision "
          "vanishes",
          "[gibbs]") {
  auto fx = Fixture::make(4, 6, 2, 1, 31);
  fx.state.tau_sq = 1e300;
  const auto joint = bsnmani::lambda_joint_conditional(fx.state, fx.data, 2);
  const auto network = bsnmani::lambda_network_conditional(
      fx.data.network(2), fx.state.u(), fx.state.sigma_sq,
      fx.state.tau_lambda_sq);
  REQUIRE((joint.precision - network.precision).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE((joint.natural - network.natural).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("coefficient conditional mean is zero when all outcomes are zero",
          "[gibbs]") {
  auto fx = Fixture::make(7, 5, 2, 2, 41);
  Dataset zeroed(std::vector<SymmetricNetwork>(fx.data.networks().begin(),
                                               fx.data.networks().end()),
                 VectorXd::Zero(fx.data.n_subjects()), fx.data.covariates());
  const auto cond = bsnmani::coeffs_conditional(fx.state, zeroed);
  REQUIRE(cond.mean().cwiseAbs().maxCoeff() < 1e-300);
}

TEST_CASE("coefficient conditional approaches OLS under a flat prior",
          "[gibbs]") {
  auto eng = testutil::engine(51);
  const int m = 200, n = 4;
  std::vector<SymmetricNetwork> nets;
  VectorXd c(m);
  MatrixXd z(m, 1);
  MatrixXd lambdas(m, 1);
  for (int i = 0; i < m; ++i) {
    nets.push_back(
        SymmetricNetwork::from_dense(testutil::random_hollow_symmetric(n, eng)));
    lambdas(i, 0) = testutil::gauss(eng);
    z(i, 0) = testutil::gauss(eng);
    c[i] = 2.0 * lambdas(i, 0) - 1.0 * z(i, 0) + 0.1 * testutil::gauss(eng);
  }
  // OLS oracle on the same design via QR.
  MatrixXd design(m, 2);
  design.col(0) = lambdas.col(0);
  design.col(1) = z.col(0);
  const VectorXd ols = design.colPivHouseholderQr().solve(c);

  Dataset data(std::move(nets), std::move(c), std::move(z));
  MatrixXd x0 = testutil::random_matrix(n, 1, eng);
  VectorXd beta0 = VectorXd::Zero(1), alpha0 = VectorXd::Zero(1);
  ModelState state(std::move(x0), lambdas, 1.0, std::move(beta0),
                   std::move(alpha0), 0.5, 1.0, 1e12, 1e12);
  const VectorXd mean = bsnmani::coeffs_conditional(state, data).mean();
  REQUIRE(mean[0] == Catch::Approx(ols[0]).epsilon(1e-6));
  REQUIRE(mean[1] == Catch::Approx(ols[1]).epsilon(1e-6));
}

TEST_CASE("coefficient conditional matches a hand-computed ridge solution",
          "[gibbs]") {
  // q=1, r=1, M=3.  Oracle: 2x2 inverse by the adjugate formula, written out
  // entry by entry.
  const double lam[3] = {1.0, 2.0, -1.0};
  const double zc[3] = {0.5, -1.0, 2.0};
  const double cc[3] = {2.0, -1.0, 0.5};
  const double tau_sq = 0.8, tau_beta_sq = 2.0, tau_alpha_sq = 5.0;

  double sll = 0, slz = 0, szz = 0, scl = 0, scz = 0;
  for (int i = 0; i < 3; ++i) {
    sll += lam[i] * lam[i];
    slz += lam[i] * zc[i];
    szz += zc[i] * zc[i];
    scl += cc[i] * lam[i];
    scz += cc[i] * zc[i];
  }
  const double a11 = 1.0 / tau_beta_sq + sll / tau_sq;
  const double a12 = slz / tau_sq;
  const double a22 = 1.0 / tau_alpha_sq + szz / tau_sq;
  const double b1 = scl / tau_sq, b2 = scz / tau_sq;
  const double det = a11 * a22 - a12 * a12;
  const double mean_beta = (a22 * b1 - a12 * b2) / det;
  const double mean_alpha = (-a12 * b1 + a11 * b2) / det;

  std::vector<SymmetricNetwork> nets;
  auto eng = testutil::engine(61);
  VectorXd c(3);
  MatrixXd z(3, 1), lambdas(3, 1);
  for (int i = 0; i < 3; ++i) {
    nets.push_back(
        SymmetricNetwork::from_dense(testutil::random_hollow_symmetric(4, eng)));
    c[i] = cc[i];
    z(i, 0) = zc[i];
    lambdas(i, 0) = lam[i];
  }
  Dataset data(std::move(nets), std::move(c), std::move(z));
  ModelState state(testutil::random_matrix(4, 1, eng), lambdas, 1.0,
                   VectorXd::Zero(1), VectorXd::Zero(1), tau_sq, 1.0,
                   tau_beta_sq, tau_alpha_sq);
  const auto cond = bsnmani::coeffs_conditional(state, data);
  const VectorXd mean = cond.mean();
  REQUIRE(mean[0] == Catch::Approx(mean_beta).epsilon(1e-12));
  REQUIRE(mean[1] == Catch::Approx(mean_alpha).epsilon(1e-12));

  // Sampled moments against the same conditional: mean and marginal
  // variances (inverse-precision diagonal would be wrong; use full inverse).
  const MatrixXd cov =
      cond.precision.inverse();
  RngStream rng(7);
  const int draws = 100000;
  MatrixXd samples(draws, 2);
  for (int t = 0; t < draws; ++t) {
    samples.row(t) = bsnmani::update_coeffs(state, data, rng).transpose();
  }
  for (int j = 0; j < 2; ++j) {
    REQUIRE(testutil::sample_mean(samples.col(j)) ==
            Catch::Approx(mean[j]).margin(0.02 * std::sqrt(cov(j, j))* 5));
    REQUIRE(testutil::sample_var(samples.col(j)) ==
            Catch::Approx(cov(j, j)).epsilon(0.02));
  }
}

TEST_CASE("variance conditional matches conjugate algebra and quadrature",
          "[gibbs]") {
  // eta0=2, tau0^2=1, M=2, q=2, sum lambda^2 = 6 -> precision ~ Gamma(3, 4).
  const auto g = bsnmani::variance_conditional(2.0, 1.0, 4.0, 6.0);
  REQUIRE(g.shape == Catch::Approx(3.0).margin(1e-15));
  REQUIRE(g.rate == Catch::Approx(4.0).margin(1e-15));
  REQUIRE(g.mean() == Catch::Approx(0.75).margin(1e-15));

  // Quadrature oracle: E[p] under prior(p) x likelihood(lambda | 1/p).
  auto log_post = [](double p) {
    if (p <= 0.0) return -1e308;
    const double shape0 = 1.0, rate0 = 1.0;  // Gamma(eta0/2, eta0*tau0^2/2)
    const double loglik = 0.5 * 4.0 * std::log(p) - p * 6.0 / 2.0;
    return (shape0 - 1.0) * std::log(p) - rate0 * p + loglik;
  };
  const auto oracle = testutil::grid_moments(log_post, 1e-9, 40.0, 400001);
  REQUIRE(oracle.mean == Catch::Approx(0.75).epsilon(1e-5));

  // Sampler moment check through update_tau_lambda_sq.
  MatrixXd lambdas(2, 2);
  lambdas << 1.0, 1.0, 2.0, 0.0;  // sum of squares = 6
  auto eng = testutil::engine(71);
  ModelState state(testutil::random_matrix(5, 2, eng), lambdas, 1.0,
                   VectorXd::Zero(2), VectorXd::Zero(0), 1.0, 1.0, 1.0, 1.0);
  Hyperparams hyper;  // eta0 = 2, tau0_sq = 1
  RngStream rng(13);
  const int draws = 100000;
  VectorXd prec(draws);
  for (int t = 0; t < draws; ++t) {
    prec[t] = 1.0 / bsnmani::update_tau_lambda_sq(state, hyper, rng);
  }
  REQUIRE(testutil::sample_mean(prec) == Catch::Approx(0.75).epsilon(0.02));
}

TEST_CASE("every variance update draws from its analytic conditional",
          "[gibbs]") {
  auto fx = Fixture::make(6, 5, 2, 2, 81);
  const auto& st = fx.state;
  const auto& data = fx.data;
  const auto& hy = fx.hyper;

  // Sufficient statistics recomputed with independent inline loops.
  double ss_net = 0.0;
  for (int i = 0; i < data.n_subjects(); ++i) {
    const MatrixXd recon = st.u() *
                           st.lambdas.row(i).transpose().asDiagonal() *
                           st.u().transpose();
    const MatrixXd diff = data.network(i).dense() - recon;
    for (int k = 0; k < st.n(); ++k) {
      for (int j = k + 1; j < st.n(); ++j) ss_net += diff(j, k) * diff(j, k);
    }
  }
  double ss_clin = 0.0;
  for (int i = 0; i < data.n_subjects(); ++i) {
    const double resid = data.outcome(i) -
                         st.beta.dot(st.lambdas.row(i).transpose()) -
                         st.alpha.dot(data.covariate_row(i));
    ss_clin += resid * resid;
  }
  const double p_pairs = 5.0 * 4.0 / 2.0;

  struct Case {
    bsnmani::GammaParams expect;
    std::function<double(ModelState&, RngStream&)> draw;
  };
  std::vector<Case> cases;
  cases.push_back({bsnmani::variance_conditional(hy.nu0, hy.sigma0_sq,
                                                 6.0 * p_pairs, ss_net),
                   [&](ModelState& s, RngStream& r) {
                     return bsnmani::update_sigma_sq(s, data.networks(), hy, r);
                   }});
  cases.push_back({bsnmani::variance_conditional(hy.rho0, hy.psi0_sq, 6.0,
                                                 ss_clin),
                   [&](ModelState& s, RngStream& r) {
                     return bsnmani::update_tau_sq(s, data, hy, r);
                   }});
  cases.push_back({bsnmani::variance_conditional(hy.eta0, hy.tau0_sq, 12.0,
                                                 st.lambdas.squaredNorm()),
                   [&](ModelState& s, RngStream& r) {
                     return bsnmani::update_tau_lambda_sq(s, hy, r);
                   }});
  cases.push_back({bsnmani::variance_conditional(hy.gamma0, hy.kappa0_sq, 2.0,
                                                 st.beta.squaredNorm()),
                   [&](ModelState& s, RngStream& r) {
                     return bsnmani::update_tau_beta_sq(s, hy, r);
                   }});
  cases.push_back({bsnmani::variance_conditional(hy.omega0, hy.phi0_sq, 2.0,
                                                 st.alpha.squaredNorm()),
                   [&](ModelState& s, RngStream& r) {
                     return bsnmani::update_tau_alpha_sq(s, hy, r);
                   }});

  RngStream rng(17);
  const int draws = 100000;
  for (auto& cs : cases) {
    ModelState work = fx.state;
    VectorXd prec(draws);
    for (int t = 0; t < draws; ++t) prec[t] = 1.0 / cs.draw(work, rng);
    REQUIRE(testutil::sample_mean(prec) ==
            Catch::Approx(cs.expect.mean()).epsilon(0.02));
  }
}

TEST_CASE("full sweeps keep the chain in a valid state", "[gibbs]") {
  auto fx = Fixture::make(10, 6, 2, 1, 91);
  RngStream rng(5);
  for (int sweep = 0; sweep < 10000; ++sweep) {
    bsnmani::gibbs_sweep_joint(fx.state, fx.data, fx.hyper, rng);
    REQUIRE(fx.state.sigma_sq > 0.0);
    REQUIRE(fx.state.tau_sq > 0.0);
    REQUIRE(fx.state.tau_lambda_sq > 0.0);
    REQUIRE(fx.state.tau_beta_sq > 0.0);
    REQUIRE(fx.state.tau_alpha_sq > 0.0);
    if (sweep % 500 == 0) {
      REQUIRE(std::isfinite(bsnmani::log_joint(fx.state, fx.data, fx.hyper)));
    }
  }
}

TEST_CASE("network sweep leaves clinical parameters untouched", "[gibbs]") {
  auto fx = Fixture::make(5, 5, 2, 2, 101);
  const VectorXd beta_before = fx.state.beta;
  const VectorXd alpha_before = fx.state.alpha;
  const double tau_before = fx.state.tau_sq;
  const MatrixXd lambdas_before = fx.state.lambdas;
  RngStream rng(3);
  bsnmani::gibbs_sweep_network(fx.state, fx.data.networks(), fx.hyper, rng);
  REQUIRE((fx.state.beta - beta_before).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((fx.state.alpha - alpha_before).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(fx.state.tau_sq == tau_before);
  REQUIRE((fx.state.lambdas - lambdas_before).cwiseAbs().minCoeff() > 0.0);
}
