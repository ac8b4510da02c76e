#pragma once

// Brute-force oracles for constrained problems over finite grids: primal and
// dual optima, the perturbation curve, the coarse/fine parameterization
// sandwich, empirical dual convergence in N, complementary slackness, the
// exact-argmin primal-dual schedule, and a per-example invariance measure.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mbdg/constraints.hpp"
#include "mbdg/data.hpp"
#include "mbdg/predictors.hpp"
#include "mbdg/solvers.hpp"
#include "mbdg/transforms.hpp"

namespace mbdg {

/// A constrained problem over a finite parameter grid with cached values.
/// constraints[e][i] is the constraint of env e at grid point i.
struct ConstrainedProblemSpec {
  std::vector<Vector> grid;
  std::vector<double> objective;
  std::vector<std::vector<double>> constraints;
  double margin = 0.0;

  std::size_t size() const noexcept { return grid.size(); }
  std::size_t num_envs() const noexcept { return constraints.size(); }
  /// Largest constraint value over envs at point i.
  double max_constraint(std::size_t i) const;
  /// Throws InvalidArgument on empty grids or ragged tables and NonFiniteError
  /// on non-finite values.
  void validate() const;

  /// Evaluates each function once per grid point.
  static ConstrainedProblemSpec from_functions(
      std::vector<Vector> grid, const std::function<double(const Vector&)>& objective,
      const std::vector<std::function<double(const Vector&)>>& constraints, double margin);

  /// Keeps grid points whose index is a multiple of `stride`.
  ConstrainedProblemSpec subgrid(std::size_t stride) const;
  ConstrainedProblemSpec subset(std::span<const std::size_t> indices) const;
};

/// Grid of 1-d parameters lo, lo + step, ..., hi (endpoints included when
/// (hi - lo) / step is integral up to rounding).
std::vector<Vector> line_grid(double lo, double hi, double step);

/// The reference convex instance: theta in [-1, 1] at resolution `step`,
/// R = theta^2, L = 0.5 - theta, margin 0.1.
ConstrainedProblemSpec convex_line_instance(double step = 1e-3);

/// Candidate dual vectors; every entry has one component per env.
using DualGrid = std::vector<Vector>;

/// Cartesian product of {0, step, ..., max} over `envs` components.
DualGrid uniform_dual_grid(std::size_t envs, double max, double step);

/// For single-env specs: adds every nonnegative lambda at which two grid points
/// tie in the Lagrangian (the kinks of the piecewise-linear dual function).
DualGrid with_breakpoints(DualGrid grid, const ConstrainedProblemSpec& spec);

struct PrimalSolution {
  bool feasible = false;
  double value = 0.0;
  std::size_t index = 0;
};

/// min R over {i : L_e(i) <= gamma for all e}; lowest index wins ties.
PrimalSolution solve_primal_grid(const ConstrainedProblemSpec& spec, double gamma);

struct DualSolution {
  double value = 0.0;
  Vector lambda;
  /// Inner argmin of the Lagrangian at `lambda`.
  std::size_t index = 0;
};

/// R(i) + sum_e lambda_e (L_e(i) - gamma).
double grid_lagrangian(const ConstrainedProblemSpec& spec, std::size_t i,
                       std::span<const double> lambda, double gamma);

/// min over the grid of grid_lagrangian at fixed lambda, with its argmin.
std::pair<double, std::size_t> dual_function(const ConstrainedProblemSpec& spec,
                                             std::span<const double> lambda, double gamma);

/// max over `lambdas` of the dual function; earliest candidate wins ties.
DualSolution solve_dual_grid(const ConstrainedProblemSpec& spec, double gamma,
                             const DualGrid& lambdas);

struct CurvePoint {
  double gamma = 0.0;
  double primal = 0.0;
};

struct GapReport {
  double gamma = 0.0;
  bool feasible = false;
  double primal = 0.0;
  double dual = 0.0;
  double gap = 0.0;
  std::size_t primal_index = 0;
  Vector primal_theta;
  Vector dual_lambda;
  std::size_t dual_index = 0;
  std::vector<CurvePoint> curve;

  /// Flat key=value lines.
  void write(std::ostream& out) const;
};

GapReport duality_gap(const ConstrainedProblemSpec& spec, double gamma, const DualGrid& lambdas);

/// P* for each margin; throws InfeasibleError if one is infeasible. Margins
/// must be ascending and nonnegative.
std::vector<CurvePoint> perturbation_curve(const ConstrainedProblemSpec& spec,
                                           std::span<const double> gammas);

/// CSV with header `gamma,P_star`.
void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve);

struct PerturbationReport {
  std::vector<CurvePoint> curve;
  bool non_increasing = false;
  /// min R over points with every constraint exactly zero.
  double exact_invariance_value = 0.0;
  bool zero_margin_matches = false;
  /// ||lambda*(0)||_1 from the dual at zero margin.
  double lambda_norm = 0.0;
  /// max over the curve of (P*(0) - P*(gamma)) - gamma * ||lambda*(0)||_1.
  double worst_bound_excess = 0.0;
  bool lipschitz_bound_holds = false;

  bool passed() const { return non_increasing && zero_margin_matches && lipschitz_bound_holds; }
};

PerturbationReport check_perturbation(const ConstrainedProblemSpec& spec,
                                      std::span<const double> gammas, const DualGrid& lambdas,
                                      double slack = 1e-9);

struct SandwichReport {
  double fine_primal = 0.0;
  double coarse_dual = 0.0;
  /// coarse_dual - fine_primal; reported, not asserted.
  double upper_gap = 0.0;
  bool lower_bound_holds = false;
};

/// Checks P*_fine(gamma) <= D*_coarse(gamma) with the dual maximized over
/// `lambdas`.
SandwichReport parameterization_sandwich(const ConstrainedProblemSpec& fine,
                                         const ConstrainedProblemSpec& coarse, double gamma,
                                         const DualGrid& lambdas, double tolerance = 1e-9);

struct SlacknessReport {
  Vector lambda;
  std::size_t theta_index = 0;
  double residual = 0.0;
  bool passed = false;
};

/// |sum_e lambda*_e (L_e(theta*) - gamma)| at the primal and dual
/// witnesses.
SlacknessReport complementary_slackness_check(const ConstrainedProblemSpec& spec, double gamma,
                                              const DualGrid& lambdas, double tolerance = 1e-3);

struct ScheduleOptions {
  double kappa = 0.5;
  double eta = 0.0;
  /// Bound B on loss and constraint values.
  double bound = 1.0;
  /// Dual step used in the iteration; defaults to eta. The horizon always
  /// follows from eta.
  std::optional<double> dual_step;
  double tolerance = 0.05;
};

struct ScheduleReport {
  std::size_t horizon = 0;
  double eta = 0.0;
  double eta_bound = 0.0;
  double primal = 0.0;
  double final_lagrangian = 0.0;
  double gap = 0.0;
  Vector final_lambda;
  std::size_t final_index = 0;
  /// |P* - Lagrangian| after each iteration 1..horizon.
  std::vector<double> gap_trace;
  bool passed = false;
};

/// Exact-argmin primal steps with projected dual ascent for
/// T = ceil(1 / (2 eta kappa)) + 1 iterations, starting at lambda = 0. The
/// Lagrangian averages constraint terms over envs. Requires 0 < eta <=
/// 2 kappa / (|E| B^2).
ScheduleReport primal_dual_schedule_check(const ConstrainedProblemSpec& spec,
                                       const ScheduleOptions& options);

/// Finite population with per-example loss and per-example constraint
/// values of every grid predictor.
struct GapPopulation {
  std::vector<std::vector<double>> loss;
  std::vector<std::vector<double>> constraint;
  double margin = 0.0;

  std::size_t grid_size() const noexcept { return loss.size(); }
  std::size_t population_size() const { return loss.empty() ? 0 : loss.front().size(); }
  /// Grid spec from the mean over the given (sorted) example indices.
  ConstrainedProblemSpec spec_for(std::span<const std::size_t> indices) const;
  ConstrainedProblemSpec population_spec() const;
};

/// Per-example cross-entropy of every predictor, and the distance between its
/// prediction on x and on G(x, code).
GapPopulation build_gap_population(std::span<const Predictor> grid,
                                   const EnvironmentDataset& population,
                                   const DomainTransformationModel& g, const EnvironmentCode& code,
                                   const DistanceMetric& m, const LossSpec& spec, double margin);

/// Two-Gaussian shape block with a color bit agreeing with the label 90% of
/// the time; linear predictors over (shape, color) weights in [-2, 2]^2 with
/// a color-flip KL constraint.
GapPopulation two_gaussian_gap_population(std::size_t size, std::uint64_t seed,
                                          std::size_t weights_per_axis = 11,
                                          double margin = 0.025);

struct GapPoint {
  std::size_t n = 0;
  double mean_deviation = 0.0;
};

struct EmpiricalGapReport {
  double population_dual = 0.0;
  std::vector<GapPoint> points;
  bool strictly_decreasing = false;
  double final_over_initial = 0.0;
};

/// For each N, draws `trials` samples of N examples without replacement and
/// reports the mean |D* - D*_N|.
EmpiricalGapReport empirical_gap_experiment(const GapPopulation& population,
                                            std::span<const std::size_t> sizes,
                                            std::size_t trials, std::uint64_t seed,
                                            const DualGrid& lambdas);

struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
};

/// Equal-width bins over [0, max(values)].
Histogram histogram(std::span<const double> values, std::size_t bins);

double median(std::vector<double> values);

struct InvarianceSummary {
  std::vector<double> values;
  std::vector<int> envs;
  double median = 0.0;
  double mean = 0.0;
  Histogram histogram;

  /// CSV `index,env,dist_reg`.
  void write_csv(std::ostream& out) const;
};

/// Per-example distance averaged over `samples_per_point` fresh codes; pair
/// mode compares two generated images, against-clean compares x with one.
InvarianceSummary measure_g_invariance(const Predictor& p,
                                       std::span<const EnvironmentDataset> data,
                                       const DomainTransformationModel& g,
                                       const DistanceMetric& m, std::size_t samples_per_point,
                                       ConstraintMode mode, std::uint64_t seed,
                                       std::size_t bins = 20);

/// Random single-env convex instance on [-1, 1] at resolution `step`:
/// R = a (theta - b)^2, L = |theta - c|, with b, c and the margin on the grid.
ConstrainedProblemSpec random_convex_spec(std::mt19937_64& rng, double step = 0.01);

/// Arbitrary finite-valued spec with `points` grid entries and `envs` envs.
ConstrainedProblemSpec random_grid_spec(std::mt19937_64& rng, std::size_t points,
                                        std::size_t envs);

}  // namespace mbdg
