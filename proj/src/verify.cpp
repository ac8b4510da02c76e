#include "mbdg/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "mbdg/datagen.hpp"

namespace mbdg {

namespace {

constexpr double kFeasibilityTolerance = 1e-12;

void write_vector(std::ostream& out, std::span<const double> v) {
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << v[i];
}

}  // namespace

double ConstrainedProblemSpec::max_constraint(std::size_t i) const {
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& row : constraints) worst = std::max(worst, row[i]);
  return worst;
}

void ConstrainedProblemSpec::validate() const {
  if (grid.empty()) throw InvalidArgument("parameter grid is empty");
  if (objective.size() != grid.size()) throw DimensionError("objective table size mismatch");
  require_finite(objective, "objective table");
  for (const auto& row : constraints) {
    if (row.size() != grid.size()) throw DimensionError("constraint table size mismatch");
    require_finite(row, "constraint table");
  }
  if (!std::isfinite(margin)) throw NonFiniteError("margin is not finite");
}

ConstrainedProblemSpec ConstrainedProblemSpec::from_functions(
    std::vector<Vector> grid, const std::function<double(const Vector&)>& objective,
    const std::vector<std::function<double(const Vector&)>>& constraints, double margin) {
  ConstrainedProblemSpec s;
  s.margin = margin;
  s.objective.reserve(grid.size());
  for (const auto& theta : grid) s.objective.push_back(objective(theta));
  for (const auto& c : constraints) {
    std::vector<double> row;
    row.reserve(grid.size());
    for (const auto& theta : grid) row.push_back(c(theta));
    s.constraints.push_back(std::move(row));
  }
  s.grid = std::move(grid);
  s.validate();
  return s;
}

ConstrainedProblemSpec ConstrainedProblemSpec::subset(std::span<const std::size_t> indices) const {
  ConstrainedProblemSpec s;
  s.margin = margin;
  s.constraints.resize(constraints.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw InvalidArgument("subset index outside the grid");
    s.grid.push_back(grid[i]);
    s.objective.push_back(objective[i]);
    for (std::size_t e = 0; e < constraints.size(); ++e) s.constraints[e].push_back(constraints[e][i]);
  }
  return s;
}

ConstrainedProblemSpec ConstrainedProblemSpec::subgrid(std::size_t stride) const {
  if (stride == 0) throw InvalidArgument("subgrid stride must be positive");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < size(); i += stride) idx.push_back(i);
  return subset(idx);
}

std::vector<Vector> line_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || !(hi >= lo)) throw InvalidArgument("invalid line grid");
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<Vector> g;
  g.reserve(n);
  // Integer multiples keep symmetric grids exactly symmetric.
  for (std::size_t i = 0; i < n; ++i) g.push_back({lo + static_cast<double>(i) * step});
  return g;
}

ConstrainedProblemSpec convex_line_instance(double step) {
  return ConstrainedProblemSpec::from_functions(
      line_grid(-1.0, 1.0, step), [](const Vector& t) { return t[0] * t[0]; },
      {[](const Vector& t) { return 0.5 - t[0]; }}, 0.1);
}

DualGrid uniform_dual_grid(std::size_t envs, double max, double step) {
  if (envs == 0) throw InvalidArgument("dual grid needs at least one component");
  if (!(step > 0.0) || !(max >= 0.0)) throw InvalidArgument("invalid dual grid");
  const auto n = static_cast<std::size_t>(std::floor(max / step + 1e-9)) + 1;
  DualGrid out;
  std::vector<std::size_t> digit(envs, 0);
  while (true) {
    Vector v(envs);
    for (std::size_t e = 0; e < envs; ++e) v[e] = static_cast<double>(digit[e]) * step;
    out.push_back(std::move(v));
    std::size_t k = 0;
    while (k < envs && ++digit[k] == n) digit[k++] = 0;
    if (k == envs) break;
  }
  return out;
}

DualGrid with_breakpoints(DualGrid grid, const ConstrainedProblemSpec& spec) {
  if (spec.num_envs() != 1) throw InvalidArgument("breakpoints need a single-env spec");
  const auto& l = spec.constraints[0];
  for (std::size_t i = 0; i < spec.size(); ++i) {
    for (std::size_t j = i + 1; j < spec.size(); ++j) {
      const double dl = l[j] - l[i];
      if (dl == 0.0) continue;
      const double lambda = (spec.objective[i] - spec.objective[j]) / dl;
      if (lambda >= 0.0 && std::isfinite(lambda)) grid.push_back({lambda});
    }
  }
  return grid;
}

PrimalSolution solve_primal_grid(const ConstrainedProblemSpec& spec, double gamma) {
  spec.validate();
  PrimalSolution best;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    if (spec.num_envs() > 0 && spec.max_constraint(i) > gamma + kFeasibilityTolerance) continue;
    if (!best.feasible || spec.objective[i] < best.value) {
      best.feasible = true;
      best.value = spec.objective[i];
      best.index = i;
    }
  }
  return best;
}

double grid_lagrangian(const ConstrainedProblemSpec& spec, std::size_t i,
                       std::span<const double> lambda, double gamma) {
  if (lambda.size() != spec.num_envs()) throw DimensionError("dual vector size mismatch");
  double v = spec.objective[i];
  for (std::size_t e = 0; e < lambda.size(); ++e) v += lambda[e] * (spec.constraints[e][i] - gamma);
  return v;
}

std::pair<double, std::size_t> dual_function(const ConstrainedProblemSpec& spec,
                                             std::span<const double> lambda, double gamma) {
  double best = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const double v = grid_lagrangian(spec, i, lambda, gamma);
    if (v < best) {
      best = v;
      arg = i;
    }
  }
  return {best, arg};
}

DualSolution solve_dual_grid(const ConstrainedProblemSpec& spec, double gamma,
                             const DualGrid& lambdas) {
  spec.validate();
  if (lambdas.empty()) throw InvalidArgument("dual grid is empty");
  DualSolution best;
  best.value = -std::numeric_limits<double>::infinity();
  for (const auto& lambda : lambdas) {
    const auto [v, arg] = dual_function(spec, lambda, gamma);
    if (v > best.value) {
      best.value = v;
      best.lambda = lambda;
      best.index = arg;
    }
  }
  return best;
}

void GapReport::write(std::ostream& out) const {
  const auto old = out.precision(17);
  out << "gamma=" << gamma << '\n'
      << "feasible=" << (feasible ? "true" : "false") << '\n'
      << "P_star=" << primal << '\n'
      << "D_star=" << dual << '\n'
      << "gap=" << gap << '\n'
      << "primal_index=" << primal_index << '\n'
      << "primal_theta=";
  write_vector(out, primal_theta);
  out << '\n' << "dual_lambda=";
  write_vector(out, dual_lambda);
  out << '\n' << "dual_index=" << dual_index << '\n';
  for (std::size_t i = 0; i < curve.size(); ++i) {
    out << "curve_" << i << '=' << curve[i].gamma << ' ' << curve[i].primal << '\n';
  }
  out.precision(old);
}

GapReport duality_gap(const ConstrainedProblemSpec& spec, double gamma, const DualGrid& lambdas) {
  GapReport r;
  r.gamma = gamma;
  const auto p = solve_primal_grid(spec, gamma);
  const auto d = solve_dual_grid(spec, gamma, lambdas);
  r.feasible = p.feasible;
  r.primal = p.feasible ? p.value : std::numeric_limits<double>::infinity();
  r.primal_index = p.index;
  if (p.feasible) r.primal_theta = spec.grid[p.index];
  r.dual = d.value;
  r.dual_lambda = d.lambda;
  r.dual_index = d.index;
  r.gap = r.primal - r.dual;
  return r;
}

std::vector<CurvePoint> perturbation_curve(const ConstrainedProblemSpec& spec,
                                           std::span<const double> gammas) {
  std::vector<CurvePoint> out;
  for (std::size_t k = 0; k < gammas.size(); ++k) {
    if (gammas[k] < 0.0) throw InvalidArgument("margins must be nonnegative");
    if (k > 0 && gammas[k] < gammas[k - 1]) throw InvalidArgument("margins must be ascending");
    const auto p = solve_primal_grid(spec, gammas[k]);
    if (!p.feasible) {
      throw InfeasibleError("no grid point is feasible at margin " + std::to_string(gammas[k]));
    }
    out.push_back({gammas[k], p.value});
  }
  return out;
}

void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve) {
  const auto old = out.precision(17);
  out << "gamma,P_star\n";
  for (const auto& c : curve) out << c.gamma << ',' << c.primal << '\n';
  out.precision(old);
}

PerturbationReport check_perturbation(const ConstrainedProblemSpec& spec,
                                      std::span<const double> gammas, const DualGrid& lambdas,
                                      double slack) {
  PerturbationReport r;
  r.curve = perturbation_curve(spec, gammas);
  r.non_increasing = true;
  for (std::size_t k = 1; k < r.curve.size(); ++k) {
    if (r.curve[k].primal > r.curve[k - 1].primal) r.non_increasing = false;
  }

  // Best risk among points that satisfy every constraint with equality to 0,
  // found without going through the margin machinery.
  bool any = false;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    bool invariant = true;
    for (const auto& row : spec.constraints) invariant = invariant && row[i] == 0.0;
    if (invariant && (!any || spec.objective[i] < r.exact_invariance_value)) {
      r.exact_invariance_value = spec.objective[i];
      any = true;
    }
  }

  const auto zero = std::find_if(r.curve.begin(), r.curve.end(),
                                 [](const CurvePoint& c) { return c.gamma == 0.0; });
  if (zero == r.curve.end()) {
    r.zero_margin_matches = false;
    r.lipschitz_bound_holds = false;
    return r;
  }
  r.zero_margin_matches = any && std::abs(zero->primal - r.exact_invariance_value) <= slack;

  const auto d0 = solve_dual_grid(spec, 0.0, lambdas);
  r.lambda_norm = 0.0;
  for (double l : d0.lambda) r.lambda_norm += std::abs(l);
  r.worst_bound_excess = -std::numeric_limits<double>::infinity();
  for (const auto& c : r.curve) {
    r.worst_bound_excess =
        std::max(r.worst_bound_excess, (zero->primal - c.primal) - c.gamma * r.lambda_norm);
  }
  r.lipschitz_bound_holds = r.worst_bound_excess <= slack;
  return r;
}

SandwichReport parameterization_sandwich(const ConstrainedProblemSpec& fine,
                                         const ConstrainedProblemSpec& coarse, double gamma,
                                         const DualGrid& lambdas, double tolerance) {
  const auto p = solve_primal_grid(fine, gamma);
  if (!p.feasible) throw InfeasibleError("fine grid has no feasible point");
  const auto d = solve_dual_grid(coarse, gamma, lambdas);
  SandwichReport r;
  r.fine_primal = p.value;
  r.coarse_dual = d.value;
  r.upper_gap = d.value - p.value;
  r.lower_bound_holds = p.value <= d.value + tolerance;
  return r;
}

SlacknessReport complementary_slackness_check(const ConstrainedProblemSpec& spec, double gamma,
                                              const DualGrid& lambdas, double tolerance) {
  const auto p = solve_primal_grid(spec, gamma);
  if (!p.feasible) throw InfeasibleError("no feasible point for the slackness check");
  const auto d = solve_dual_grid(spec, gamma, lambdas);
  SlacknessReport r;
  r.lambda = d.lambda;
  r.theta_index = p.index;
  double s = 0.0;
  for (std::size_t e = 0; e < spec.num_envs(); ++e) {
    if (d.lambda[e] != 0.0) s += d.lambda[e] * (spec.constraints[e][p.index] - gamma);
  }
  r.residual = std::abs(s);
  r.passed = r.residual <= tolerance;
  return r;
}

ScheduleReport primal_dual_schedule_check(const ConstrainedProblemSpec& spec,
                                       const ScheduleOptions& options) {
  spec.validate();
  const std::size_t envs = spec.num_envs();
  if (envs == 0) throw InvalidArgument("schedule check needs constraints");
  if (!(options.kappa > 0.0) || !(options.bound > 0.0)) {
    throw InvalidArgument("kappa and bound must be positive");
  }
  ScheduleReport r;
  r.eta = options.eta;
  r.eta_bound = 2.0 * options.kappa / (static_cast<double>(envs) * options.bound * options.bound);
  if (!(options.eta > 0.0) || options.eta > r.eta_bound * (1.0 + 1e-12)) {
    throw InvalidArgument("eta must lie in (0, 2 kappa / (|E| B^2)]");
  }
  const double step = options.dual_step.value_or(options.eta);
  if (step < 0.0) throw InvalidArgument("dual step must be nonnegative");
  r.horizon = static_cast<std::size_t>(std::ceil(1.0 / (2.0 * options.eta * options.kappa))) + 1;

  const double gamma = spec.margin;
  const auto p = solve_primal_grid(spec, gamma);
  if (!p.feasible) throw InfeasibleError("schedule check needs a feasible problem");
  r.primal = p.value;

  const double inv_envs = 1.0 / static_cast<double>(envs);
  auto averaged_argmin = [&](const Vector& lambda) {
    Vector scaled(lambda);
    for (double& l : scaled) l *= inv_envs;
    return dual_function(spec, scaled, gamma);
  };

  Vector lambda(envs, 0.0);
  for (std::size_t t = 0; t < r.horizon; ++t) {
    const std::size_t i = averaged_argmin(lambda).second;
    for (std::size_t e = 0; e < envs; ++e) {
      lambda[e] = std::max(0.0, lambda[e] + step * (spec.constraints[e][i] - gamma));
    }
    const auto [value, next] = averaged_argmin(lambda);
    r.final_lagrangian = value;
    r.final_index = next;
    r.gap_trace.push_back(std::abs(r.primal - value));
  }
  r.final_lambda = lambda;
  r.gap = r.gap_trace.back();
  r.passed = r.gap <= options.tolerance;
  return r;
}

ConstrainedProblemSpec GapPopulation::spec_for(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw InvalidArgument("empirical spec needs at least one example");
  ConstrainedProblemSpec s;
  s.margin = margin;
  s.constraints.resize(1);
  std::vector<double> buf(indices.size());
  const double inv = 1.0 / static_cast<double>(indices.size());
  for (std::size_t i = 0; i < grid_size(); ++i) {
    s.grid.push_back({static_cast<double>(i)});
    for (std::size_t k = 0; k < indices.size(); ++k) buf[k] = loss[i][indices[k]];
    s.objective.push_back(pairwise_sum(buf) * inv);
    for (std::size_t k = 0; k < indices.size(); ++k) buf[k] = constraint[i][indices[k]];
    s.constraints[0].push_back(pairwise_sum(buf) * inv);
  }
  return s;
}

ConstrainedProblemSpec GapPopulation::population_spec() const {
  std::vector<std::size_t> all(population_size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return spec_for(all);
}

GapPopulation build_gap_population(std::span<const Predictor> grid,
                                   const EnvironmentDataset& population,
                                   const DomainTransformationModel& g, const EnvironmentCode& code,
                                   const DistanceMetric& m, const LossSpec& spec, double margin) {
  if (grid.empty() || population.empty()) throw InvalidArgument("empty gap population");
  GapPopulation out;
  out.margin = margin;
  std::vector<Vector> transformed;
  transformed.reserve(population.size());
  for (const auto& ex : population.examples) transformed.push_back(apply(g, ex.x, code));
  for (const auto& p : grid) {
    std::vector<double> loss, cons;
    loss.reserve(population.size());
    cons.reserve(population.size());
    for (std::size_t j = 0; j < population.size(); ++j) {
      const auto& ex = population.examples[j];
      const Vector q = p.predict(ex.x);
      loss.push_back(cross_entropy(q, ex.y, spec));
      cons.push_back(distance(m, q, p.predict(transformed[j])));
    }
    out.loss.push_back(std::move(loss));
    out.constraint.push_back(std::move(cons));
  }
  return out;
}

GapPopulation two_gaussian_gap_population(std::size_t size, std::uint64_t seed,
                                          std::size_t weights_per_axis, double margin) {
  if (weights_per_axis < 2) throw InvalidArgument("need at least two weights per axis");
  ConceptShiftSpec spec;
  spec.color_agreement = {0.9};
  const auto population = gen_concept_shift_env(spec, 0, size, seed);
  const auto g = concept_shift_transform(spec);

  Architecture arch{{ConceptShiftSpec::kDim, 2}, Activation::Tanh};
  std::vector<Predictor> grid;
  const double step = 4.0 / static_cast<double>(weights_per_axis - 1);
  for (std::size_t a = 0; a < weights_per_axis; ++a) {
    for (std::size_t b = 0; b < weights_per_axis; ++b) {
      const double ws = -2.0 + static_cast<double>(a) * step;
      const double wc = -2.0 + static_cast<double>(b) * step;
      // Class-1 logit minus class-0 logit equals ws (s0 + s1) + wc (green - red).
      std::vector<double> theta(Predictor::layout_for(arch).total_size(), 0.0);
      const double row[ConceptShiftSpec::kDim] = {ws, ws, 0.0, -wc, wc};
      for (std::size_t k = 0; k < ConceptShiftSpec::kDim; ++k) {
        theta[k] = -0.5 * row[k];
        theta[ConceptShiftSpec::kDim + k] = 0.5 * row[k];
      }
      grid.emplace_back(arch, ParameterVector(Predictor::layout_for(arch), std::move(theta)));
    }
  }
  return build_gap_population(grid, population, g, EnvironmentCode{1.0}, DistanceMetric{},
                              LossSpec{}, margin);
}

EmpiricalGapReport empirical_gap_experiment(const GapPopulation& population,
                                            std::span<const std::size_t> sizes,
                                            std::size_t trials, std::uint64_t seed,
                                            const DualGrid& lambdas) {
  if (sizes.empty() || trials == 0) throw InvalidArgument("empirical gap needs sizes and trials");
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    if (sizes[k] == 0 || sizes[k] > population.population_size()) {
      throw InvalidArgument("sample size outside [1, population size]");
    }
    if (k > 0 && sizes[k] <= sizes[k - 1]) throw InvalidArgument("sample sizes must ascend");
  }
  const auto pop_spec = population.population_spec();
  EmpiricalGapReport r;
  r.population_dual = solve_dual_grid(pop_spec, pop_spec.margin, lambdas).value;

  std::vector<std::size_t> all(population.population_size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t n : sizes) {
    std::vector<double> deviations;
    for (std::size_t t = 0; t < trials; ++t) {
      std::vector<std::size_t> pick;
      pick.reserve(n);
      std::sample(all.begin(), all.end(), std::back_inserter(pick), n, rng);
      const auto s = population.spec_for(pick);
      deviations.push_back(std::abs(r.population_dual - solve_dual_grid(s, s.margin, lambdas).value));
    }
    r.points.push_back({n, pairwise_sum(deviations) / static_cast<double>(trials)});
  }
  r.strictly_decreasing = true;
  for (std::size_t k = 1; k < r.points.size(); ++k) {
    if (!(r.points[k].mean_deviation < r.points[k - 1].mean_deviation)) r.strictly_decreasing = false;
  }
  const double first = r.points.front().mean_deviation;
  r.final_over_initial = first > 0.0 ? r.points.back().mean_deviation / first : 0.0;
  return r;
}

Histogram histogram(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw InvalidArgument("histogram needs at least one bin");
  Histogram h;
  double hi = 0.0;
  for (double v : values) hi = std::max(hi, v);
  if (hi == 0.0) hi = 1.0;
  for (std::size_t b = 0; b <= bins; ++b) {
    h.edges.push_back(hi * static_cast<double>(b) / static_cast<double>(bins));
  }
  h.counts.assign(bins, 0);
  for (double v : values) {
    auto b = static_cast<std::size_t>(v / hi * static_cast<double>(bins));
    h.counts[std::min(b, bins - 1)]++;
  }
  return h;
}

double median(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void InvarianceSummary::write_csv(std::ostream& out) const {
  const auto old = out.precision(17);
  out << "index,env,dist_reg\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    out << i << ',' << envs[i] << ',' << values[i] << '\n';
  }
  out.precision(old);
}

InvarianceSummary measure_g_invariance(const Predictor& p,
                                       std::span<const EnvironmentDataset> data,
                                       const DomainTransformationModel& g,
                                       const DistanceMetric& m, std::size_t samples_per_point,
                                       ConstraintMode mode, std::uint64_t seed, std::size_t bins) {
  if (samples_per_point == 0) throw InvalidArgument("need at least one code per point");
  InvarianceSummary s;
  Rng rng(seed);
  std::vector<double> per_sample(samples_per_point);
  for (const auto& ds : data) {
    for (const auto& ex : ds.examples) {
      const Vector clean = p.predict(ex.x);
      for (std::size_t k = 0; k < samples_per_point; ++k) {
        const Vector a = mode == ConstraintMode::PairGenerated
                             ? p.predict(generate_image(g, ex.x, rng))
                             : clean;
        const Vector b = p.predict(generate_image(g, ex.x, rng));
        per_sample[k] = m.reversed ? distance(m, b, a) : distance(m, a, b);
      }
      s.values.push_back(pairwise_sum(per_sample) / static_cast<double>(samples_per_point));
      s.envs.push_back(ds.env);
    }
  }
  if (s.values.empty()) throw InvalidArgument("invariance measurement needs data");
  s.median = median(s.values);
  s.mean = pairwise_sum(s.values) / static_cast<double>(s.values.size());
  s.histogram = histogram(s.values, bins);
  return s;
}

ConstrainedProblemSpec random_convex_spec(std::mt19937_64& rng, double step) {
  const auto steps = static_cast<long>(std::lround(1.0 / step));
  auto on_grid = [&](long lo, long hi) {
    std::uniform_int_distribution<long> d(lo, hi);
    return static_cast<double>(d(rng)) * step;
  };
  std::uniform_real_distribution<double> scale(0.5, 2.0);
  const double a = scale(rng);
  const double b = on_grid(-steps, steps);
  const double c = on_grid(-8 * steps / 10, 8 * steps / 10);
  const double gamma = on_grid(std::max(2L, steps / 50), 3 * steps / 10);
  return ConstrainedProblemSpec::from_functions(
      line_grid(-1.0, 1.0, step), [a, b](const Vector& t) { return a * (t[0] - b) * (t[0] - b); },
      {[c](const Vector& t) { return std::abs(t[0] - c); }}, gamma);
}

ConstrainedProblemSpec random_grid_spec(std::mt19937_64& rng, std::size_t points,
                                        std::size_t envs) {
  if (points == 0) throw InvalidArgument("random spec needs grid points");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ConstrainedProblemSpec s;
  s.margin = 0.1 + 0.4 * u(rng);
  s.constraints.resize(envs);
  for (std::size_t i = 0; i < points; ++i) {
    s.grid.push_back({static_cast<double>(i)});
    s.objective.push_back(2.0 * u(rng));
    for (auto& row : s.constraints) row.push_back(u(rng));
  }
  return s;
}

}  // namespace mbdg
