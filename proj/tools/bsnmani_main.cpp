// bsnmani: scalar-on-network regression with low-rank network factorization.
//
// Subcommands:
//   simulate   draw a synthetic dataset (networks + clinical table + truth)
//   fit        run the joint or two-stage posterior sampler
//   predict    score new subjects against a fitted posterior directory
//   cv         repeated k-fold cross-validated predictive R^2
//
// Exit codes: 0 success, 2 usage error, 3 input/validation error,
// 4 numerical failure.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bsnmani/evaluate.hpp"
#include "bsnmani/io.hpp"
#include "bsnmani/sampler.hpp"
#include "bsnmani/simulate.hpp"
#include "bsnmani/twostage.hpp"

namespace fs = std::filesystem;
using namespace bsnmani;

namespace {

// Registers every file a command writes; removes them all if the command
// throws, so a failed run leaves no partial artifacts behind.
class OutputGuard {
 public:
  ~OutputGuard() {
    if (!armed_) return;
    for (const std::string& p : paths_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }
  std::string track(const std::string& path) {
    paths_.push_back(path);
    return path;
  }
  void release() { armed_ = false; }

 private:
  std::vector<std::string> paths_;
  bool armed_ = true;
};

void ensure_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out))
    throw ValidationError("cannot create output directory '" + out + "'");
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string config_path;
  std::string out;
  // Flag overrides; presence tracked by CLI11 option counts.
  int n_nodes = 0, q = 0, n_subjects = 0;
  double snr_y = 0, snr_c = 0, lambda_rate = 0;
  std::uint64_t seed = 0;
};

void cmd_simulate(const SimulateArgs& args, const CLI::App& cmd) {
  SimConfig config;
  if (!args.config_path.empty())
    apply_sim_config(read_config_file(args.config_path), config,
                     args.config_path);
  if (cmd.count("--n-nodes")) config.n_nodes = args.n_nodes;
  if (cmd.count("--q")) config.q = args.q;
  if (cmd.count("--n-subjects")) config.n_subjects = args.n_subjects;
  if (cmd.count("--snr-y")) config.snr_y = args.snr_y;
  if (cmd.count("--snr-c")) config.snr_c = args.snr_c;
  if (cmd.count("--lambda-rate")) config.lambda_rate = args.lambda_rate;
  if (cmd.count("--seed")) config.seed = args.seed;

  const SimResult sim = generate(config);
  ensure_out_dir(args.out);
  ensure_out_dir(join(args.out, "truth"));

  std::vector<std::string> ids;
  for (int i = 0; i < config.n_subjects; ++i)
    ids.push_back("s" + std::to_string(i + 1));
  MetaInfo meta;
  meta.n_nodes = config.n_nodes;
  for (int i = 0; i < config.n_nodes; ++i)
    meta.node_labels.push_back("node_" + std::to_string(i + 1));

  OutputGuard guard;
  write_networks_csv(guard.track(join(args.out, "networks.csv")), ids,
                     {sim.data.networks().begin(), sim.data.networks().end()});
  write_clinical_csv(guard.track(join(args.out, "clinical.csv")), ids,
                     sim.data.outcomes(), sim.data.covariates());
  write_meta_json(guard.track(join(args.out, "meta.json")), meta);
  write_matrix_csv(guard.track(join(args.out, "truth/u_true.csv")),
                   sim.truth.u_true.matrix());
  write_matrix_csv(guard.track(join(args.out, "truth/lambdas_true.csv")),
                   sim.truth.lambdas_true);
  write_truth_params_json(guard.track(join(args.out, "truth/params.json")),
                          sim.truth);
  guard.release();
  std::cout << "wrote " << config.n_subjects << " subjects (" << config.n_nodes
            << " nodes) to " << args.out << "\n";
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string networks, clinical, meta, out, config_path;
  std::string sampler = "joint";
  int q = 0, iters = 0, burn_in = -1, thin = 0;
  std::uint64_t seed = 0;
};

SamplerConfig resolve_sampler_config(const FitArgs& args, const CLI::App& cmd) {
  SamplerConfig config;
  if (!args.config_path.empty())
    apply_sampler_config(read_config_file(args.config_path), config,
                         args.config_path);
  if (cmd.count("--q")) config.q = args.q;
  if (cmd.count("--iters")) config.iters = args.iters;
  if (cmd.count("--burn-in")) config.burn_in = args.burn_in;
  if (cmd.count("--thin")) config.thin = args.thin;
  if (cmd.count("--seed")) config.seed = args.seed;
  return config;
}

void cmd_fit(const FitArgs& args, const CLI::App& cmd) {
  if (args.sampler != "joint" && args.sampler != "twostage")
    throw ConfigurationError("--sampler must be 'joint' or 'twostage'");
  const SamplerConfig config = resolve_sampler_config(args, cmd);
  const LoadedDataset loaded =
      load_dataset(args.networks, args.clinical, args.meta);

  const auto start = std::chrono::steady_clock::now();
  const PosteriorDraws draws = args.sampler == "joint"
                                   ? run_joint(loaded.data, config)
                                   : run_twostage(loaded.data, config);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();

  RunInfo run;
  run.sampler = args.sampler;
  run.config = config;
  run.n_subjects = loaded.data.n_subjects();
  run.n_nodes = loaded.data.n_nodes();
  run.n_covariates = loaded.data.n_covariates();
  run.runtime_seconds = seconds;
  run.imh_acceptance_rate = draws.imh_acceptance_rate;
  run.integration_skips = draws.integration_skips;
  run.step_size = draws.step_size;
  run.acceptance.assign(draws.accepted.begin(), draws.accepted.end());
  run.log_joint = draws.log_joint_trace;

  ensure_out_dir(args.out);
  OutputGuard guard;
  write_draws_csv(guard.track(join(args.out, "draws.csv")), draws);
  write_u_draws_csv(guard.track(join(args.out, "u_draws.csv")), draws);
  write_lambda_draws_csv(guard.track(join(args.out, "lambda_draws.csv")),
                         draws);
  write_run_json(guard.track(join(args.out, "run.json")), run);
  guard.release();
  std::cout << "kept " << draws.n_draws() << " draws in " << args.out << " ("
            << format_real(seconds) << "s)\n";
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  std::string posterior, networks, clinical, meta, out;
  bool samples = false;
  bool sample_noise = false;
  std::uint64_t seed = 0;
};

void cmd_predict(const PredictArgs& args) {
  const PosteriorDraws draws =
      read_posterior(join(args.posterior, "draws.csv"),
                     join(args.posterior, "u_draws.csv"),
                     join(args.posterior, "lambda_draws.csv"));
  const LoadedDataset loaded =
      load_dataset(args.networks, args.clinical, args.meta);

  PredictConfig config;
  config.seed = args.seed;
  config.sample_noise = args.sample_noise;
  const Predictions pred = predict(draws, loaded.data, config);

  ensure_out_dir(args.out);
  OutputGuard guard;
  write_predictions_csv(guard.track(join(args.out, "predictions.csv")),
                        loaded.subject_ids, pred);
  if (args.samples)
    write_prediction_samples_csv(
        guard.track(join(args.out, "prediction_samples.csv")),
        loaded.subject_ids, pred);
  guard.release();
  std::cout << "wrote predictions for " << loaded.data.n_subjects()
            << " subjects to " << args.out << "\n";
}

// ---------------------------------------------------------------------------
// cv

struct CvArgs {
  FitArgs fit;  // reuses dataset/sampler/config plumbing
  int folds = 0;
  int repeats = 1;
};

void cmd_cv(const CvArgs& args, const CLI::App& cmd) {
  if (args.fit.sampler != "joint" && args.fit.sampler != "twostage")
    throw ConfigurationError("--sampler must be 'joint' or 'twostage'");
  const SamplerConfig config = resolve_sampler_config(args.fit, cmd);
  const LoadedDataset loaded =
      load_dataset(args.fit.networks, args.fit.clinical, args.fit.meta);
  const SamplerKind kind = args.fit.sampler == "joint" ? SamplerKind::kJoint
                                                       : SamplerKind::kTwoStage;
  const CvResult result =
      cross_validate(loaded.data, args.folds, args.repeats, config, kind);

  ensure_out_dir(args.fit.out);
  OutputGuard guard;
  write_cv_results_csv(guard.track(join(args.fit.out, "cv_results.csv")),
                       result);
  guard.release();
  std::cout << "cv median R^2 " << format_real(result.median) << " (IQR "
            << format_real(result.iqr) << ") over " << result.rows.size()
            << " rows\n";
}

void add_fit_flags(CLI::App* cmd, FitArgs& args, bool sampler_controls) {
  cmd->add_option("--networks", args.networks, "networks.csv path")
      ->required();
  cmd->add_option("--clinical", args.clinical, "clinical.csv path")
      ->required();
  cmd->add_option("--meta", args.meta,
                  "meta.json path (cross-checked against networks.csv)");
  cmd->add_option("--out", args.out, "output directory")->required();
  cmd->add_option("--config", args.config_path,
                  "key = value settings file (flags override it)");
  if (sampler_controls) {
    cmd->add_option("--sampler", args.sampler, "joint or twostage")
        ->default_str("joint");
    cmd->add_option("--q", args.q, "latent rank");
    cmd->add_option("--iters", args.iters, "total Gibbs iterations");
    cmd->add_option("--burn-in", args.burn_in, "burn-in iterations");
    cmd->add_option("--thin", args.thin, "thinning stride");
    cmd->add_option("--seed", args.seed, "RNG seed");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian scalar-on-network regression"};
  app.require_subcommand(1);

  SimulateArgs sim_args;
  CLI::App* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
  sim->add_option("--config", sim_args.config_path,
                  "key = value settings file (flags override it)");
  sim->add_option("--out", sim_args.out, "output directory")->required();
  sim->add_option("--n-nodes", sim_args.n_nodes, "network node count");
  sim->add_option("--q", sim_args.q, "latent rank");
  sim->add_option("--n-subjects", sim_args.n_subjects, "subject count");
  sim->add_option("--snr-y", sim_args.snr_y, "network signal-to-noise ratio");
  sim->add_option("--snr-c", sim_args.snr_c,
                  "outcome signal-to-noise ratio (inf = noise-free)");
  sim->add_option("--lambda-rate", sim_args.lambda_rate,
                  "exponential rate for true loadings");
  sim->add_option("--seed", sim_args.seed, "RNG seed");

  FitArgs fit_args;
  CLI::App* fit = app.add_subcommand("fit", "sample the posterior");
  add_fit_flags(fit, fit_args, true);

  PredictArgs pred_args;
  CLI::App* pred = app.add_subcommand("predict", "score held-out subjects");
  pred->add_option("--posterior", pred_args.posterior,
                   "directory written by fit")
      ->required();
  pred->add_option("--networks", pred_args.networks, "test networks.csv")
      ->required();
  pred->add_option("--clinical", pred_args.clinical,
                   "test clinical.csv (outcomes may be placeholders)")
      ->required();
  pred->add_option("--meta", pred_args.meta, "meta.json path");
  pred->add_option("--out", pred_args.out, "output directory")->required();
  pred->add_flag("--samples", pred_args.samples,
                 "also write per-draw prediction_samples.csv");
  pred->add_flag("--sample-noise", pred_args.sample_noise,
                 "add outcome noise to predictive samples");
  pred->add_option("--seed", pred_args.seed, "RNG seed for predictive draws");

  CvArgs cv_args;
  CLI::App* cv = app.add_subcommand("cv", "repeated k-fold cross-validation");
  add_fit_flags(cv, cv_args.fit, true);
  cv->add_option("--folds", cv_args.folds, "fold count (>= 2)")->required();
  cv->add_option("--repeats", cv_args.repeats, "partition repeats");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // 0 covers --help/--version
  }

  try {
    if (sim->parsed()) cmd_simulate(sim_args, *sim);
    if (fit->parsed()) cmd_fit(fit_args, *fit);
    if (pred->parsed()) cmd_predict(pred_args);
    if (cv->parsed()) cmd_cv(cv_args, *cv);
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigurationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const UndefinedMetricError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;  // numerical / integration / singularity / unexpected failure
  }
}
