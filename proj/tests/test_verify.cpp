#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "mbdg/datagen.hpp"
#include "mbdg/errors.hpp"
#include "mbdg/verify.hpp"

using namespace mbdg;

namespace {

const DualGrid kLambdas = uniform_dual_grid(1, 10.0, 0.01);

ConstrainedProblemSpec abs_instance(double step = 1e-3) {
  return ConstrainedProblemSpec::from_functions(
      line_grid(-1.0, 1.0, step), [](const Vector& t) { return t[0] * t[0]; },
      {[](const Vector& t) { return std::abs(t[0] - 0.5); }}, 0.1);
}

}  // namespace

TEST_CASE("solve_primal_grid examples") {
  const auto spec = abs_instance();
  const auto p = solve_primal_grid(spec, 0.1);
  REQUIRE(p.feasible);
  CHECK(p.value == doctest::Approx(0.16).epsilon(1e-12));
  CHECK(spec.grid[p.index][0] == doctest::Approx(0.4).epsilon(1e-12));

  const auto vacuous = solve_primal_grid(spec, 10.0);
  CHECK(vacuous.value == 0.0);
  CHECK(spec.grid[vacuous.index][0] == 0.0);

  // min_theta |theta - 0.5| is 0 on the grid, so pick a spec bounded away from it.
  const auto far = ConstrainedProblemSpec::from_functions(
      line_grid(-1.0, 1.0, 0.1), [](const Vector& t) { return t[0]; },
      {[](const Vector& t) { return 2.0 + t[0] * t[0]; }}, 0.1);
  CHECK_FALSE(solve_primal_grid(far, 1.0).feasible);
}

TEST_CASE("line_grid includes both endpoints") {
  const auto g = line_grid(-1.0, 1.0, 1e-3);
  CHECK(g.size() == 2001);
  CHECK(g.front()[0] == -1.0);
  CHECK(g.back()[0] == 1.0);
  CHECK(g[1500][0] == 0.5);
}

TEST_CASE("solve_dual_grid examples") {
  const auto spec = convex_line_instance();
  const auto trivial = solve_dual_grid(spec, 0.1, DualGrid{{0.0}});
  CHECK(trivial.value == 0.0);

  const auto report = duality_gap(spec, 0.1, with_breakpoints(kLambdas, spec));
  CHECK(report.feasible);
  CHECK(report.primal == doctest::Approx(0.16).epsilon(1e-12));
  CHECK(std::abs(report.gap) <= 2e-3);
  CHECK(report.dual_lambda[0] == doctest::Approx(0.8).epsilon(1e-9));
  // The plain uniform grid already brackets the optimum closely.
  CHECK(std::abs(duality_gap(spec, 0.1, kLambdas).gap) <= 2e-3);

  std::ostringstream out;
  report.write(out);
  CHECK(out.str().find("P_star=") != std::string::npos);
  CHECK(out.str().find("gap=") != std::string::npos);
}

TEST_CASE("property: weak duality on 100 random grid specs") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t envs = 1 + trial % 2;
    const auto spec = random_grid_spec(rng, 40, envs);
    const auto lambdas = uniform_dual_grid(envs, 5.0, envs == 1 ? 0.05 : 0.5);
    const auto p = solve_primal_grid(spec, spec.margin);
    const auto d = solve_dual_grid(spec, spec.margin, lambdas);
    if (p.feasible) CHECK(d.value <= p.value + 1e-9);
  }
}

TEST_CASE("perturbation curve examples and properties") {
  const auto spec = convex_line_instance();
  const std::vector<double> gammas{0.0, 0.05, 0.1};
  const auto curve = perturbation_curve(spec, gammas);
  CHECK(curve[0].primal == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(curve[1].primal == doctest::Approx(0.2025).epsilon(1e-12));
  CHECK(curve[2].primal == doctest::Approx(0.16).epsilon(1e-12));

  const auto report = check_perturbation(spec, gammas, with_breakpoints(kLambdas, spec));
  CHECK(report.non_increasing);
  CHECK(report.zero_margin_matches);
  CHECK(report.lipschitz_bound_holds);
  CHECK(report.lambda_norm == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(report.passed());

  const std::vector<double> unsorted{0.1, 0.05};
  CHECK_THROWS_AS(perturbation_curve(spec, unsorted), InvalidArgument);
  const std::vector<double> negative{-0.1};
  CHECK_THROWS(perturbation_curve(spec, negative));

  const auto far = ConstrainedProblemSpec::from_functions(
      line_grid(0.0, 1.0, 0.5), [](const Vector& t) { return t[0]; },
      {[](const Vector&) { return 1.0; }}, 0.1);
  const std::vector<double> small{0.5};
  CHECK_THROWS_AS(perturbation_curve(far, small), InfeasibleError);

  std::ostringstream csv;
  write_curve_csv(csv, curve);
  CHECK(csv.str().rfind("gamma,P_star\n", 0) == 0);
}

TEST_CASE("property: P* is non-increasing in gamma on random specs") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto spec = random_grid_spec(rng, 30, 2);
    double prev = std::numeric_limits<double>::infinity();
    for (double gamma = 0.0; gamma <= 1.5; gamma += 0.05) {
      const auto p = solve_primal_grid(spec, gamma);
      if (!p.feasible) continue;
      CHECK(p.value <= prev);
      prev = p.value;
    }
  }
}

TEST_CASE("zero margin recovers the best exactly invariant point") {
  // Constraint is zero only on theta <= -0.5; objective prefers theta = 0.
  const auto spec = ConstrainedProblemSpec::from_functions(
      line_grid(-1.0, 1.0, 0.01), [](const Vector& t) { return t[0] * t[0]; },
      {[](const Vector& t) { return std::max(0.0, t[0] + 0.5); }}, 0.0);
  const std::vector<double> gammas{0.0, 0.2};
  const auto r = check_perturbation(spec, gammas, with_breakpoints(kLambdas, spec));
  CHECK(r.exact_invariance_value == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(r.curve[0].primal == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(r.zero_margin_matches);
}

TEST_CASE("parameterization sandwich") {
  const auto fine = convex_line_instance(1e-3);
  const auto same = parameterization_sandwich(fine, fine, 0.1, with_breakpoints(kLambdas, fine));
  CHECK(same.lower_bound_holds);
  CHECK(std::abs(same.upper_gap) <= 2e-3);

  std::mt19937_64 rng(21);
  std::size_t violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto f = random_convex_spec(rng);
    const auto c = f.subgrid(10);
    const auto r = parameterization_sandwich(f, c, f.margin, with_breakpoints(kLambdas, c));
    violations += r.lower_bound_holds ? 0 : 1;
  }
  CHECK(violations == 0);

  // A single feasible-optimal point: its dual value with lambda = 0 is its risk.
  const auto p = solve_primal_grid(fine, 0.1);
  const std::vector<std::size_t> one{p.index};
  const auto single = parameterization_sandwich(fine, fine.subset(one), 0.1, kLambdas);
  CHECK(single.lower_bound_holds);
  CHECK(single.coarse_dual == doctest::Approx(p.value).epsilon(1e-12));
}

TEST_CASE("complementary slackness") {
  const auto spec = convex_line_instance();
  const auto active = complementary_slackness_check(spec, 0.1, with_breakpoints(kLambdas, spec));
  CHECK(active.passed);
  CHECK(active.residual <= 1e-3);

  const auto inactive = ConstrainedProblemSpec::from_functions(
      line_grid(-1.0, 1.0, 1e-2), [](const Vector& t) { return t[0] * t[0]; },
      {[](const Vector&) { return 0.01; }}, 0.1);
  const auto r = complementary_slackness_check(inactive, 0.1, kLambdas);
  CHECK(r.lambda[0] == 0.0);
  CHECK(r.residual == 0.0);
}

TEST_CASE("schedule check: convergence, trivial case and negative control") {
  const auto spec = convex_line_instance();
  // L = 0.5 - theta ranges over [-0.5, 1.5] on [-1, 1].
  ScheduleOptions opts;
  opts.bound = 1.5;
  opts.eta = 2 * opts.kappa / (opts.bound * opts.bound);
  const auto r = primal_dual_schedule_check(spec, opts);
  CHECK(r.horizon == static_cast<std::size_t>(std::ceil(1.0 / (2 * opts.eta * opts.kappa))) + 1);
  CHECK(r.gap <= 0.05);
  CHECK(r.passed);
  CHECK(r.gap_trace.size() == r.horizon);

  ScheduleOptions control = opts;
  control.dual_step = 0.0;
  const auto neg = primal_dual_schedule_check(spec, control);
  CHECK_FALSE(neg.passed);
  CHECK(neg.final_lambda[0] == 0.0);
  CHECK(neg.gap > 0.05);

  const auto feasible = ConstrainedProblemSpec::from_functions(
      line_grid(-1.0, 1.0, 1e-3), [](const Vector& t) { return t[0] * t[0]; },
      {[](const Vector& t) { return 0.05 * std::abs(t[0]); }}, 0.1);
  const auto easy = primal_dual_schedule_check(feasible, opts);
  CHECK(easy.gap_trace.front() <= 1e-12);

  ScheduleOptions too_big = opts;
  too_big.eta = 1.5;
  CHECK_THROWS_AS(primal_dual_schedule_check(spec, too_big), InvalidArgument);
}

TEST_CASE("empirical gap: full population and zero-variance losses") {
  const auto pop = two_gaussian_gap_population(400, 3, 5);
  const std::vector<std::size_t> all{400};
  const auto full = empirical_gap_experiment(pop, all, 10, 1, kLambdas);
  CHECK(full.points[0].mean_deviation == 0.0);

  GapPopulation flat;
  flat.margin = 0.1;
  for (int g = 0; g < 4; ++g) {
    flat.loss.emplace_back(200, 0.1 * g);
    flat.constraint.emplace_back(200, 0.05 * (3 - g));
  }
  const std::vector<std::size_t> sizes{10, 50, 100};
  const auto r = empirical_gap_experiment(flat, sizes, 10, 2, kLambdas);
  for (const auto& pt : r.points) CHECK(pt.mean_deviation == 0.0);
}

TEST_CASE("empirical gap decreases with N on a small population") {
  const auto pop = two_gaussian_gap_population(4000, 5, 7);
  const std::vector<std::size_t> sizes{50, 800};
  const auto r = empirical_gap_experiment(pop, sizes, 10, 9, uniform_dual_grid(1, 10.0, 0.05));
  CHECK(r.points.back().mean_deviation < r.points.front().mean_deviation);
}

TEST_CASE("median and histogram") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK_THROWS(median({}));
  const std::vector<double> v{0.0, 0.1, 0.5, 1.0};
  const auto h = histogram(v, 2);
  CHECK(h.edges.size() == 3);
  CHECK(h.counts[0] == 2);
  CHECK(h.counts[1] == 2);
  CHECK(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}) == v.size());
}

TEST_CASE("measure_g_invariance trivial cases") {
  ConceptShiftSpec spec;
  spec.n_per_env = 50;
  const auto data = gen_concept_shift(spec, 4);
  const auto g = concept_shift_transform(spec);
  const auto constant = Predictor::zeros(Architecture::standard(5, 2));
  const auto a = measure_g_invariance(constant, data, g, DistanceMetric{}, 4, ConstraintMode::PairGenerated, 1);
  CHECK(a.values.size() == 150);
  for (double v : a.values) CHECK(v == 0.0);
  CHECK(a.median == 0.0);

  const auto trained = Predictor::initialize(Architecture::standard(5, 2), 3);
  const auto identity = rotation_model(0, 1, 0.0, 0.0, 5);
  const auto b = measure_g_invariance(trained, data, identity, DistanceMetric{}, 4, ConstraintMode::AgainstClean, 1);
  for (double v : b.values) CHECK(v == 0.0);
  const auto c = measure_g_invariance(trained, data, g, DistanceMetric{}, 4, ConstraintMode::AgainstClean, 1);
  CHECK(c.mean > 0.0);

  std::ostringstream csv;
  c.write_csv(csv);
  CHECK(csv.str().rfind("index,env,dist_reg\n", 0) == 0);
  CHECK_THROWS(measure_g_invariance(trained, std::vector<EnvironmentDataset>{}, g, DistanceMetric{}, 4,
                                    ConstraintMode::AgainstClean, 1));
}

TEST_CASE("spec validation") {
  ConstrainedProblemSpec bad;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  auto spec = convex_line_instance(0.1);
  spec.objective[3] = std::nan("");
  CHECK_THROWS_AS(spec.validate(), NonFiniteError);
}
