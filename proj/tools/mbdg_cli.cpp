// Command-line front end: datagen, train, compare, measure-invariance, verify.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure
// during training, 3 a verification check failed.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "mbdg/experiment.hpp"

namespace {

struct CommonOptions {
  std::vector<std::string> configs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> holdout;
};

mbdg::ExperimentConfig resolve(const std::string& path, const CommonOptions& o) {
  auto c = mbdg::load_config(path);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out_dir = *o.out;
  if (o.holdout) {
    if (*o.holdout < 0 || static_cast<std::size_t>(*o.holdout) >= c.num_envs()) {
      throw mbdg::ConfigError("holdout", "no environment with id " + std::to_string(*o.holdout));
    }
    c.holdout = *o.holdout;
  }
  return c;
}

void add_common(CLI::App* cmd, CommonOptions& o, bool many_configs) {
  auto* opt = cmd->add_option("--config", o.configs, "experiment config (INI)")->required();
  if (!many_configs) opt->expected(1);
  cmd->add_option("--seed", o.seed, "overrides [run] seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--holdout", o.holdout, "environment id excluded from training");
}

int run_train(const CommonOptions& o) {
  const auto config = resolve(o.configs.front(), o);
  try {
    const auto outcome = mbdg::run_experiment(config);
    mbdg::write_run_artifacts(config.out_dir, outcome);
    std::cout << "heldout_accuracy="
              << outcome.summary.get("heldout_accuracy").value_or("") << '\n'
              << "wrote " << config.out_dir.string() << '\n';
  } catch (const mbdg::TrainingAborted& e) {
    mbdg::write_trace(config.out_dir, e.trace());
    std::cerr << "error: training aborted: " << e.what() << '\n'
              << "partial trace: " << (config.out_dir / "trace.csv").string() << '\n';
    return 2;
  }
  return 0;
}

int run_compare(const CommonOptions& o) {
  std::vector<mbdg::ExperimentConfig> configs;
  for (const auto& path : o.configs) configs.push_back(resolve(path, o));
  const auto table = mbdg::compare_configs(configs);
  const std::filesystem::path dir = o.out ? std::filesystem::path(*o.out) : configs.front().out_dir;
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "comparison.csv");
  table.write_csv(out);
  table.write_csv(std::cout);
  return 0;
}

int run_measure(const CommonOptions& o) {
  const auto config = resolve(o.configs.front(), o);
  const auto data = mbdg::make_data(config, config.holdout);
  mbdg::SolverConfig solver = config.solver;
  solver.seed = config.seed;
  const auto result = mbdg::train(solver, data.train, config.transform);
  const auto inv = mbdg::measure_invariance(config, result.predictor, data);
  std::filesystem::create_directories(config.out_dir);
  std::ofstream csv(config.out_dir / "invariance.csv");
  inv.write_csv(csv);
  std::ofstream summary(config.out_dir / "invariance_summary.txt");
  summary.precision(17);
  summary << "median=" << inv.median << "\nmean=" << inv.mean << "\ncount=" << inv.values.size()
          << '\n';
  for (std::size_t b = 0; b < inv.histogram.counts.size(); ++b) {
    summary << "bin_" << b << '=' << inv.histogram.edges[b] << ' ' << inv.histogram.edges[b + 1]
            << ' ' << inv.histogram.counts[b] << '\n';
  }
  std::cout << "median=" << inv.median << "\nmean=" << inv.mean << '\n';
  return 0;
}

int run_datagen(const CommonOptions& o) {
  const auto config = resolve(o.configs.front(), o);
  mbdg::write_datagen(config, config.out_dir);
  std::cout << "wrote " << config.out_dir.string() << '\n';
  return 0;
}

int run_verify(const std::string& suite) {
  const auto& names = mbdg::verify_suite_names();
  std::vector<std::string> selected;
  if (suite == "all") {
    selected = names;
  } else if (std::find(names.begin(), names.end(), suite) != names.end()) {
    selected = {suite};
  } else {
    std::cerr << "error: unknown verify suite '" << suite << "' (known: all";
    for (const auto& n : names) std::cerr << ", " << n;
    std::cerr << ")\n";
    return 1;
  }
  bool ok = true;
  for (const auto& name : selected) {
    for (const auto& c : mbdg::run_verify_suite(name)) {
      std::cout << (c.passed ? "PASS " : "FAIL ") << name << ": " << c.name;
      if (!c.detail.empty()) std::cout << " (" << c.detail << ')';
      std::cout << '\n';
      ok = ok && c.passed;
    }
  }
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constrained invariant learning experiments"};
  app.require_subcommand(1);

  CommonOptions datagen_opts, train_opts, compare_opts, measure_opts;
  auto* datagen = app.add_subcommand("datagen", "generate and dump datasets");
  add_common(datagen, datagen_opts, false);
  auto* train = app.add_subcommand("train", "train one config and write artifacts");
  add_common(train, train_opts, false);
  auto* compare = app.add_subcommand("compare", "hold-one-out comparison of configs");
  add_common(compare, compare_opts, true);
  auto* measure = app.add_subcommand("measure-invariance", "per-example invariance of a trained predictor");
  add_common(measure, measure_opts, false);
  std::string suite;
  auto* verify = app.add_subcommand("verify", "run a verifier suite");
  verify->add_option("suite", suite, "duality, perturbation, empirical-gap, schedule, slackness or all")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*datagen) return run_datagen(datagen_opts);
    if (*train) return run_train(train_opts);
    if (*compare) return run_compare(compare_opts);
    if (*measure) return run_measure(measure_opts);
    if (*verify) return run_verify(suite);
  } catch (const mbdg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const mbdg::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
