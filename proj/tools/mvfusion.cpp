#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mvfusion/config.hpp"
#include "mvfusion/errors.hpp"
#include "mvfusion/experiment.hpp"
#include "mvfusion/selfcheck.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::string seeds_override;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required) {
  auto* cfg = cmd->add_option("config", args.config_path, "experiment config (key = value lines)");
  if (config_required) cfg->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", args.out_dir, "output directory")->capture_default_str();
  cmd->add_option("--seeds", args.seeds_override, "comma-separated seed list overriding the config");
}

mvf::ExperimentConfig load_config(const CommonArgs& args) {
  mvf::ExperimentConfig cfg = mvf::parse_config_file(args.config_path);
  if (!args.seeds_override.empty()) {
    std::vector<std::uint64_t> seeds;
    for (const std::string& tok : mvf::detail::split_list(args.seeds_override))
      seeds.push_back(mvf::detail::parse_size(tok, "--seeds", seeds.size() + 1));
    if (seeds.empty()) throw mvf::ConfigError("--seeds list is empty");
    cfg.seeds = std::move(seeds);
    mvf::validate_config(cfg);
  }
  return cfg;
}

int run_selfcheck_cmd(const CommonArgs& args, bool inject_fault, bool quick) {
  mvf::SelfCheckOptions opts;
  opts.corrupt_gradients = inject_fault;
  if (quick) {
    opts.entropy_mixtures = 20;
    opts.entropy_samples = 20000;
    opts.quad_draws = 4;
    opts.quad_T = 64;
    opts.quad_Tm = 32;
    opts.quad_points_z = 121;
    opts.quad_points_xm = 161;
  }
  if (!args.config_path.empty()) {
    mvf::ExperimentConfig cfg = load_config(args);
    opts.seed = cfg.seeds.front();
  }
  const auto results = mvf::run_selfchecks(opts);
  for (const auto& r : results)
    std::printf("%s %s: %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
  if (!mvf::all_passed(results)) {
    std::fprintf(stderr, "selfcheck failed\n");
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-view variational fusion: train, sweep, validate, impute"};
  app.require_subcommand(1);

  CommonArgs train_args, sweep_args, check_args, impute_args;
  bool inject_fault = false;
  bool quick = false;

  auto* train = app.add_subcommand("train", "train one model per seed and write metrics");
  add_common(train, train_args, true);
  auto* sweep = app.add_subcommand("sweep", "run the labeled/missing grid across estimator variants");
  add_common(sweep, sweep_args, true);
  auto* selfcheck = app.add_subcommand("selfcheck", "run numeric validation families");
  add_common(selfcheck, check_args, false);
  selfcheck->add_flag("--inject-gradient-fault", inject_fault,
                      "corrupt one analytic gradient to exercise the failure path")
      ->group("");  // hidden; test hook only
  selfcheck->add_flag("--quick", quick, "reduced sample counts for fast smoke runs")->group("");
  auto* impute = app.add_subcommand("impute", "fill the maskable view using a trained checkpoint");
  add_common(impute, impute_args, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (train->parsed()) {
      mvf::run_train(load_config(train_args), train_args.out_dir);
      std::printf("wrote %s/metrics.csv and %s/summary.csv\n", train_args.out_dir.c_str(),
                  train_args.out_dir.c_str());
    } else if (sweep->parsed()) {
      mvf::run_sweep(load_config(sweep_args), sweep_args.out_dir);
      std::printf("wrote per-cell metrics under %s and %s/summary.csv\n", sweep_args.out_dir.c_str(),
                  sweep_args.out_dir.c_str());
    } else if (selfcheck->parsed()) {
      return run_selfcheck_cmd(check_args, inject_fault, quick);
    } else if (impute->parsed()) {
      mvf::run_impute(load_config(impute_args), impute_args.out_dir);
      std::printf("wrote %s/imputed.csv\n", impute_args.out_dir.c_str());
    }
  } catch (const mvf::ConfigError& e) {
    std::fprintf(stderr, "%s\n", e.what());  // already prefixed "config error:"
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
