#pragma once

// Experiment configs, runs, hold-one-out comparison and verifier suites
// behind the command-line tool.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mbdg/datagen.hpp"
#include "mbdg/solvers.hpp"
#include "mbdg/verify.hpp"

namespace mbdg {

enum class TaskKind { ConceptShift, CovariateShift };

std::string to_string(TaskKind k);

using ConfigSection = std::vector<std::pair<std::string, std::string>>;

struct ExperimentConfig {
  TaskKind task = TaskKind::ConceptShift;
  ConceptShiftSpec concept_shift;
  CovariateShiftSpec covariate_shift;
  /// Training samples per env (covariate shift; concept shift uses its spec).
  std::size_t n_per_env = 2000;
  /// Fresh evaluation samples per env.
  std::size_t n_test = 20000;
  DomainTransformationModel transform{RotationModel{}};
  SolverConfig solver;
  std::uint64_t seed = 0;
  std::optional<int> holdout;
  std::string label;
  std::filesystem::path out_dir = "out";
  /// Codes drawn per example when measuring invariance.
  std::size_t invariance_samples = 16;

  /// Raw sections as written, used for echoing and for comparing tasks.
  std::map<std::string, ConfigSection> sections;

  std::size_t num_envs() const;
  std::string display_label() const { return label.empty() ? to_string(solver.algorithm) : label; }
};

/// Parses INI text. Throws ConfigError naming the offending key.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Training and evaluation datasets for one run.
struct ExperimentData {
  std::vector<EnvironmentDataset> train;
  /// Fresh samples for every declared env.
  std::vector<EnvironmentDataset> test;
  std::vector<int> heldout;
};

/// Generates data for the config; `holdout` excludes that env from training.
/// Without a holdout, concept shift holds out its last env and covariate
/// shift trains on its train codes.
ExperimentData make_data(const ExperimentConfig& config, std::optional<int> holdout);

/// Both splits of every declared env, keyed by env id in order.
void write_datagen(const ExperimentConfig& config, const std::filesystem::path& dir);

struct RunSummary {
  std::vector<std::pair<std::string, std::string>> fields;
  double wall_clock_seconds = 0.0;

  void add(const std::string& key, const std::string& value) { fields.emplace_back(key, value); }
  void add(const std::string& key, double value);
  std::optional<std::string> get(const std::string& key) const;

  /// key=value lines; the wall clock sits on its own final line.
  void write(std::ostream& out) const;
  void write_json(std::ostream& out) const;
};

struct RunOutcome {
  TrainResult result;
  ExperimentData data;
  RunSummary summary;
};

/// Trains on the config's data and evaluates every env.
RunOutcome run_experiment(const ExperimentConfig& config);

/// summary.txt, summary.json, trace.csv and predictor.txt in `dir`.
void write_run_artifacts(const std::filesystem::path& dir, const RunOutcome& outcome);

/// Partial trace after an aborted run.
void write_trace(const std::filesystem::path& dir, const TrainTrace& trace);

/// Invariance of the trained predictor over held-out test data.
InvarianceSummary measure_invariance(const ExperimentConfig& config, const Predictor& p,
                                     const ExperimentData& data);

struct ComparisonRow {
  std::string label;
  std::vector<double> heldout_accuracy;
  double average = 0.0;
};

struct ComparisonTable {
  std::vector<int> envs;
  std::vector<ComparisonRow> rows;

  /// `algorithm,env_<id>...,Avg`.
  void write_csv(std::ostream& out) const;
};

/// Hold-one-out over every declared env for each config. Throws ConfigError
/// when task sections differ.
ComparisonTable compare_configs(const std::vector<ExperimentConfig>& configs);

struct VerifyCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

const std::vector<std::string>& verify_suite_names();

/// Runs a named suite; throws InvalidArgument for unknown names.
std::vector<VerifyCheck> run_verify_suite(const std::string& name);

}  // namespace mbdg
