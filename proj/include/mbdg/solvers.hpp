#pragma once

// Training procedures: ERM, the MBDG primal-dual iteration and its
// augmentation / regularization variants.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mbdg/constraints.hpp"
#include "mbdg/data.hpp"
#include "mbdg/predictors.hpp"
#include "mbdg/transforms.hpp"

namespace mbdg {

enum class Algorithm { Erm, Mbdg, Mbda, MbdgDa, MbdgReg };

/// Which inputs the invariance term compares: two independently generated
/// images G(x, e) and G(x, e'), or the clean x against G(x, e).
enum class ConstraintMode { PairGenerated, AgainstClean };

/// One multiplier shared by all training environments, or one per env.
enum class DualMode { Single, PerEnv };

std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& name);
std::string to_string(ConstraintMode m);
ConstraintMode parse_constraint_mode(const std::string& name);
std::string to_string(DualMode m);
DualMode parse_dual_mode(const std::string& name);

struct SolverConfig {
  Algorithm algorithm = Algorithm::Mbdg;
  double primal_step = 0.5;
  double dual_step = 0.05;
  double margin = 0.025;
  /// Fixed multiplier of the regularized variant.
  double weight = 1.0;
  /// Regularized variant also trains on the generated batch.
  bool reg_augment = false;
  /// Examples drawn per training environment per step.
  std::size_t batch_size = 64;
  std::size_t steps = 1500;
  std::uint64_t seed = 0;
  ConstraintMode constraint_mode = ConstraintMode::PairGenerated;
  DualMode dual_mode = DualMode::Single;
  double initial_dual = 0.0;
  std::vector<std::size_t> hidden{16};
  Activation activation = Activation::Tanh;
  LossSpec loss;
  DistanceMetric metric;

  /// Throws ConfigError naming the offending key.
  void validate() const;
  bool uses_constraint() const {
    return algorithm == Algorithm::Mbdg || algorithm == Algorithm::MbdgDa ||
           algorithm == Algorithm::MbdgReg;
  }
  bool has_dual_ascent() const {
    return algorithm == Algorithm::Mbdg || algorithm == Algorithm::MbdgDa;
  }
};

struct DualState {
  std::vector<double> lambda;
  double margin = 0.025;
  double step = 0.05;

  static DualState single(double lambda, double margin, double step) {
    return DualState{{lambda}, margin, step};
  }
  bool is_single() const { return lambda.size() == 1; }
};

struct TraceRecord {
  std::size_t step = 0;
  double loss = 0.0;
  std::vector<double> lambda;
  double gamma = 0.0;
  double dist_reg = 0.0;
  std::vector<double> dist_reg_env;
};

struct TrainTrace {
  std::vector<int> envs;
  bool per_env_dual = false;
  std::vector<TraceRecord> records;

  /// `step,loss,lambda[,lambda_e...],gamma,distreg[,distreg_e...]`, 17
  /// significant digits.
  void write_csv(std::ostream& out) const;
};

struct TrainResult {
  Predictor predictor;
  TrainTrace trace;
};

/// Raised when a step produces a non-finite objective; carries the trace up
/// to the failing step.
class TrainingAborted : public NonFiniteError {
 public:
  TrainingAborted(const std::string& what, TrainTrace trace)
      : NonFiniteError(what), trace_(std::move(trace)) {}
  const TrainTrace& trace() const noexcept { return trace_; }

 private:
  TrainTrace trace_;
};

/// risk + (1/|E|) sum_e (constraint_e - margin) * lambda_e; a single lambda
/// multiplies every constraint.
double lagrangian_value(double risk, std::span<const double> constraints, const DualState& dual);

/// Empirical Lagrangian: pooled risk over `data` plus constraint values for
/// env `e` measured on data[e] against codes[e].
double empirical_lagrangian(const Predictor& p, const DualState& dual,
                            std::span<const EnvironmentDataset> data,
                            const DomainTransformationModel& g,
                            std::span<const EnvironmentCode> codes, const DistanceMetric& m,
                            const LossSpec& spec);

/// A minibatch with its generated images. Rows of env k occupy
/// [k * per_env, (k + 1) * per_env).
struct Minibatch {
  std::vector<Vector> clean;
  std::vector<std::size_t> labels;
  /// G(x, e) for the constraint (and augmentation) term.
  std::vector<Vector> generated;
  /// Second independent draw G(x, e'); empty when unused.
  std::vector<Vector> generated_extra;
  std::size_t env_count = 0;
  std::size_t per_env = 0;
};

/// Samples batch_size rows per env (with replacement) and generates the
/// images the configured algorithm needs.
Minibatch sample_minibatch(std::span<const EnvironmentDataset> data,
                           const DomainTransformationModel& g, const SolverConfig& config,
                           Rng& batch_rng, Rng& gen_rng);

struct StepResult {
  std::vector<double> theta;
  double loss = 0.0;
  double dist_reg = 0.0;
  std::vector<double> dist_reg_env;
};

/// theta - step * grad(objective) for a scalar tape objective.
ParameterVector primal_step(const Tape& objective, const ParameterVector& theta, double step);

/// One SGD step on loss + lambda * distReg over the minibatch. Reported loss
/// and distReg are evaluated at the incoming theta.
StepResult primal_step(const Predictor& p, const DualState& dual, const Minibatch& batch,
                       const SolverConfig& config);

/// lambda_e <- max(0, lambda_e + step * (dist_reg_e - margin)).
DualState dual_step(const DualState& dual, std::span<const double> dist_reg);
double dual_step(double lambda, double dist_reg, double margin, double step);

/// Runs the configured algorithm over the training environments.
TrainResult train(const SolverConfig& config, std::span<const EnvironmentDataset> train_data,
                  const DomainTransformationModel& g);

struct WorstDomain {
  double value = 0.0;
  int env = 0;
};

/// Maximum per-env empirical risk; ties resolve to the earliest dataset.
WorstDomain worst_domain_risk(const Predictor& p, std::span<const EnvironmentDataset> datasets,
                              const LossSpec& spec = {});

/// Minimum per-env accuracy; ties resolve to the earliest dataset.
WorstDomain worst_domain_accuracy(const Predictor& p, std::span<const EnvironmentDataset> datasets);

}  // namespace mbdg
