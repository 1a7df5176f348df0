#include <atomic>
#include <cstdlib>
#include <numeric>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "bsnmani/errors.hpp"
#include "bsnmani/evaluate.hpp"
#include "bsnmani/simulate.hpp"
#include "bsnmani/threads.hpp"
#include "bsnmani/twostage.hpp"

namespace {

struct EnvGuard {
  explicit EnvGuard(const char* value) {
    if (value == nullptr) {
      unsetenv("BSNMANI_THREADS");
    } else {
      setenv("BSNMANI_THREADS", value, 1);
    }
  }
  ~EnvGuard() { unsetenv("BSNMANI_THREADS"); }
};

}  // namespace

TEST_CASE("worker cap follows the environment variable", "[threads]") {
  {
    EnvGuard env("3");
    CHECK(bsnmani::thread_cap() == 3);
  }
  {
    EnvGuard env("1");
    CHECK(bsnmani::thread_cap() == 1);
  }
  {
    EnvGuard env("zero");
    CHECK_THROWS_AS(bsnmani::thread_cap(), bsnmani::ConfigurationError);
  }
  {
    EnvGuard env("0");
    CHECK_THROWS_AS(bsnmani::thread_cap(), bsnmani::ConfigurationError);
  }
  {
    EnvGuard env(nullptr);
    CHECK(bsnmani::thread_cap() >= 1);
  }
}

TEST_CASE("parallel map visits every index exactly once", "[threads]") {
  EnvGuard env("4");
  const int n = 997;
  std::vector<std::atomic<int>> hits(n);
  for (auto& h : hits) h.store(0);
  bsnmani::parallel_for(n, [&](int i) { hits[static_cast<std::size_t>(i)]++; });
  for (const auto& h : hits) CHECK(h.load() == 1);

  // Indexed collection matches a serial loop regardless of worker count.
  std::vector<double> parallel_out(n);
  bsnmani::parallel_for(
      n, [&](int i) { parallel_out[static_cast<std::size_t>(i)] = i * 1.5; });
  for (int i = 0; i < n; ++i) {
    CHECK(parallel_out[static_cast<std::size_t>(i)] == i * 1.5);
  }

  bsnmani::parallel_for(0, [&](int) { FAIL("must not be called"); });
}

TEST_CASE("worker exceptions propagate to the caller", "[threads]") {
  EnvGuard env("4");
  CHECK_THROWS_AS(bsnmani::parallel_for(
                      64,
                      [&](int i) {
                        if (i == 17) {
                          throw bsnmani::NumericalError("boom");
                        }
                      }),
                  bsnmani::NumericalError);
}

TEST_CASE("worker count never changes cross-validation output", "[threads]") {
  bsnmani::SimConfig scfg;
  scfg.n_nodes = 6;
  scfg.q = 1;
  scfg.n_subjects = 12;
  scfg.snr_y = 4.0;
  scfg.seed = 5;
  const auto sim = bsnmani::generate(scfg);

  bsnmani::SamplerConfig cfg;
  cfg.q = 1;
  cfg.iters = 200;
  cfg.burn_in = 100;
  cfg.seed = 7;

  bsnmani::CvResult serial, threaded;
  {
    EnvGuard env("1");
    serial = bsnmani::cross_validate(sim.data, 3, 2, cfg,
                                     bsnmani::SamplerKind::kJoint);
  }
  {
    EnvGuard env("4");
    threaded = bsnmani::cross_validate(sim.data, 3, 2, cfg,
                                       bsnmani::SamplerKind::kJoint);
  }
  REQUIRE(serial.rows.size() == threaded.rows.size());
  for (std::size_t i = 0; i < serial.rows.size(); ++i) {
    CHECK(serial.rows[i].r2 == threaded.rows[i].r2);
    CHECK(serial.rows[i].fold == threaded.rows[i].fold);
  }
  CHECK(serial.median == threaded.median);
}

TEST_CASE("worker count never changes the two-stage sampler output",
          "[threads]") {
  bsnmani::SimConfig scfg;
  scfg.n_nodes = 6;
  scfg.q = 1;
  scfg.n_subjects = 14;
  scfg.snr_y = 4.0;
  scfg.seed = 11;
  const auto sim = bsnmani::generate(scfg);

  bsnmani::SamplerConfig cfg;
  cfg.q = 1;
  cfg.iters = 240;
  cfg.burn_in = 120;
  cfg.seed = 13;

  bsnmani::PosteriorDraws serial, threaded;
  {
    EnvGuard env("1");
    serial = bsnmani::run_twostage(sim.data, cfg);
  }
  {
    EnvGuard env("4");
    threaded = bsnmani::run_twostage(sim.data, cfg);
  }
  REQUIRE(serial.n_draws() == threaded.n_draws());
  for (int j = 0; j < serial.n_draws(); ++j) {
    const auto js = static_cast<std::size_t>(j);
    CHECK((serial.u[js] - threaded.u[js]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((serial.beta[js] - threaded.beta[js]).cwiseAbs().maxCoeff() == 0.0);
    CHECK(serial.tau_sq[js] == threaded.tau_sq[js]);
  }
  CHECK(serial.imh_acceptance_rate == threaded.imh_acceptance_rate);
}
