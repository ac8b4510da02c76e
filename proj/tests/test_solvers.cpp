#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "mbdg/datagen.hpp"
#include "mbdg/errors.hpp"
#include "mbdg/solvers.hpp"

using namespace mbdg;

namespace {

std::vector<EnvironmentDataset> small_concept_data(std::size_t n = 400) {
  ConceptShiftSpec spec;
  spec.n_per_env = n;
  auto all = gen_concept_shift(spec, 3);
  all.pop_back();
  return all;
}

SolverConfig quick(Algorithm a) {
  SolverConfig c;
  c.algorithm = a;
  c.steps = 60;
  c.batch_size = 16;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("empirical Lagrangian examples") {
  const DualState dual{{1.0, 2.0}, 0.025, 0.05};
  const double constraints[] = {0.1, 0.3};
  CHECK(lagrangian_value(0.5, constraints, dual) == doctest::Approx(0.8125).epsilon(1e-15));

  const DualState zero{{0.0, 0.0}, 0.025, 0.05};
  CHECK(lagrangian_value(0.5, constraints, zero) == 0.5);

  ConceptShiftSpec spec;
  spec.n_per_env = 60;
  const auto data = gen_concept_shift(spec, 4);
  const auto g = concept_shift_transform(spec);
  const std::vector<EnvironmentCode> codes{{1.0}, {1.0}, {0.0}};
  const Predictor constant = Predictor::zeros(Architecture::standard(5, 2));
  const double risk = std::log(2.0);
  // A constant predictor is exactly invariant, so each env contributes
  // -lambda_e * gamma / |E|.
  const DualState three{{1.0, 2.0, 3.0}, 0.025, 0.05};
  CHECK(empirical_lagrangian(constant, three, data, g, codes, DistanceMetric{}, LossSpec{}) ==
        doctest::Approx(risk - 0.025 * 2.0).epsilon(1e-12));

  const Predictor p = Predictor::initialize(Architecture::standard(5, 2), 3);
  const auto single = DualState::single(0.0, 0.025, 0.05);
  double pooled = 0.0;
  std::size_t n = 0;
  for (const auto& ds : data) {
    pooled += empirical_risk(p, ds, LossSpec{}) * static_cast<double>(ds.size());
    n += ds.size();
  }
  CHECK(empirical_lagrangian(p, single, data, g, codes, DistanceMetric{}, LossSpec{}) ==
        doctest::Approx(pooled / static_cast<double>(n)).epsilon(1e-12));
  CHECK_THROWS_AS(lagrangian_value(0.5, constraints, DualState{{1.0, 2.0, 3.0}, 0.025, 0.05}), DimensionError);
}

TEST_CASE("dual_step examples") {
  CHECK(dual_step(0.0, 0.425, 0.025, 0.05) == doctest::Approx(0.02).epsilon(1e-14));
  CHECK(dual_step(0.01, 0.005, 0.025, 0.05) == doctest::Approx(0.009).epsilon(1e-14));
  CHECK(dual_step(0.0005, 0.0, 0.025, 0.05) == 0.0);
  const DualState d{{0.1, 0.0}, 0.025, 0.05};
  const double reg[] = {0.225, 0.0};
  const auto next = dual_step(d, reg);
  CHECK(next.lambda[0] == doctest::Approx(0.11));
  CHECK(next.lambda[1] == 0.0);
}

TEST_CASE("property: dual_step keeps lambda nonnegative and responds monotonically") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const double lambda = 2.0 * u(rng), reg = u(rng), gamma = 0.001 + 0.5 * u(rng), eta = u(rng);
    const double next = dual_step(lambda, reg, gamma, eta);
    CHECK(next >= 0.0);
    if (eta > 0.0 && reg > gamma) CHECK(next > lambda);
    if (reg <= gamma) CHECK(next <= lambda);
  }
}

TEST_CASE("primal_step on a scalar tape") {
  Tape t(1);
  const auto p = t.parameter(0, 1, 1);
  t.set_output(t.mul(p, p));
  const auto next = primal_step(t, ParameterVector::flat({1.0}), 0.1);
  CHECK(next[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(primal_step(t, ParameterVector::flat({1.0}), 0.0)[0] == 1.0);
}

TEST_CASE("primal_step: zero step is the identity and lambda = 0 matches ERM") {
  const auto data = small_concept_data();
  ConceptShiftSpec spec;
  const auto g = concept_shift_transform(spec);
  SolverConfig c = quick(Algorithm::Mbdg);
  Rng br(1), gr(2);
  const auto batch = sample_minibatch(data, g, c, br, gr);
  const auto p = Predictor::initialize(Architecture::standard(5, 2), 1);

  SolverConfig frozen = c;
  frozen.primal_step = 1e-300;
  const auto tiny = primal_step(p, DualState::single(0.5, c.margin, c.dual_step), batch, frozen);
  for (std::size_t i = 0; i < tiny.theta.size(); ++i) CHECK(tiny.theta[i] == p.parameters()[i]);

  SolverConfig erm = c;
  erm.algorithm = Algorithm::Erm;
  const auto a = primal_step(p, DualState::single(0.0, c.margin, c.dual_step), batch, c);
  const auto b = primal_step(p, DualState::single(0.0, c.margin, c.dual_step), batch, erm);
  CHECK(a.theta == b.theta);
  CHECK(a.loss == b.loss);
}

TEST_CASE("primal_step with lambda > 0 reduces the minibatch Lagrangian for small steps") {
  const auto data = small_concept_data();
  ConceptShiftSpec spec;
  const auto g = concept_shift_transform(spec);
  SolverConfig c = quick(Algorithm::Mbdg);
  c.primal_step = 1e-3;
  Rng br(7), gr(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto batch = sample_minibatch(data, g, c, br, gr);
    const auto p = Predictor::initialize(Architecture::standard(5, 2), 100 + trial);
    const auto dual = DualState::single(2.0, c.margin, c.dual_step);
    const auto step = primal_step(p, dual, batch, c);
    const auto after = primal_step(p.with_parameters(step.theta), dual, batch, c);
    CHECK(after.loss + 2.0 * after.dist_reg < step.loss + 2.0 * step.dist_reg);
  }
}

TEST_CASE("mbdg with no dual ascent reproduces the ERM trajectory exactly") {
  const auto data = small_concept_data();
  const auto g = concept_shift_transform(ConceptShiftSpec{});
  SolverConfig mbdg = quick(Algorithm::Mbdg);
  mbdg.dual_step = 0.0;
  mbdg.initial_dual = 0.0;
  const auto a = train(mbdg, data, g);
  const auto b = train(quick(Algorithm::Erm), data, g);
  CHECK(std::equal(a.predictor.parameters().values().begin(), a.predictor.parameters().values().end(),
                   b.predictor.parameters().values().begin()));
  for (std::size_t i = 0; i < a.trace.records.size(); ++i) {
    CHECK(a.trace.records[i].loss == b.trace.records[i].loss);
    CHECK(a.trace.records[i].lambda[0] == 0.0);
  }
}

TEST_CASE("lambda stays at zero while the constraint is satisfied") {
  // With an identity transform every distReg estimate is 0 < gamma.
  const auto data = small_concept_data();
  const auto g = rotation_model(0, 1, 0.0, 0.0, 5);
  const auto r = train(quick(Algorithm::Mbdg), data, g);
  for (const auto& rec : r.trace.records) {
    CHECK(rec.lambda[0] == 0.0);
    CHECK(rec.dist_reg == 0.0);
  }
}

TEST_CASE("training is deterministic and the trace has one record per step") {
  const auto data = small_concept_data();
  const auto g = concept_shift_transform(ConceptShiftSpec{});
  for (auto alg : {Algorithm::Erm, Algorithm::Mbdg, Algorithm::Mbda, Algorithm::MbdgDa, Algorithm::MbdgReg}) {
    const auto a = train(quick(alg), data, g);
    const auto b = train(quick(alg), data, g);
    std::ostringstream sa, sb;
    a.trace.write_csv(sa);
    b.trace.write_csv(sb);
    CHECK(sa.str() == sb.str());
    CHECK(a.trace.records.size() == 60);
    CHECK(std::equal(a.predictor.parameters().values().begin(), a.predictor.parameters().values().end(),
                     b.predictor.parameters().values().begin()));
    for (const auto& rec : a.trace.records) {
      for (double l : rec.lambda) CHECK(l >= 0.0);
      CHECK(rec.dist_reg_env.size() == 2);
    }
  }
}

TEST_CASE("regularized variant keeps lambda fixed at the weight") {
  const auto data = small_concept_data();
  auto c = quick(Algorithm::MbdgReg);
  c.weight = 0.7;
  const auto r = train(c, data, concept_shift_transform(ConceptShiftSpec{}));
  for (const auto& rec : r.trace.records) CHECK(rec.lambda[0] == 0.7);
}

TEST_CASE("per-env dual mode tracks one multiplier per env") {
  const auto data = small_concept_data();
  auto c = quick(Algorithm::Mbdg);
  c.dual_mode = DualMode::PerEnv;
  const auto r = train(c, data, concept_shift_transform(ConceptShiftSpec{}));
  CHECK(r.trace.records.back().lambda.size() == 2);
  std::ostringstream csv;
  r.trace.write_csv(csv);
  CHECK(csv.str().rfind("step,loss,lambda,lambda_0,lambda_1,gamma,distreg,distreg_0,distreg_1\n", 0) == 0);
  // Per-env estimates average to the pooled one.
  for (const auto& rec : r.trace.records) {
    CHECK(0.5 * (rec.dist_reg_env[0] + rec.dist_reg_env[1]) == doctest::Approx(rec.dist_reg).epsilon(1e-12));
  }
}

TEST_CASE("trace CSV uses 17 significant digits") {
  TrainTrace t;
  t.envs = {0};
  t.records.push_back({0, 1.0 / 3.0, {0.1}, 0.025, 2.0 / 3.0, {2.0 / 3.0}});
  std::ostringstream out;
  t.write_csv(out);
  CHECK(out.str() == "step,loss,lambda,gamma,distreg,distreg_0\n"
                     "0,0.33333333333333331,0.10000000000000001,0.025000000000000001,"
                     "0.66666666666666663,0.66666666666666663\n");
}

TEST_CASE("non-finite steps abort with the partial trace") {
  const auto data = small_concept_data();
  auto c = quick(Algorithm::Erm);
  c.primal_step = 1e300;
  c.activation = Activation::Relu;
  try {
    train(c, data, concept_shift_transform(ConceptShiftSpec{}));
    FAIL("expected TrainingAborted");
  } catch (const TrainingAborted& e) {
    CHECK(e.trace().records.size() == 1);
  }
}

TEST_CASE("config validation names the offending key") {
  SolverConfig c;
  c.margin = 0.0;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "margin");
  }
  c = SolverConfig{};
  c.primal_step = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SolverConfig{};
  c.steps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(parse_algorithm("sgd"), ConfigError);
  CHECK(parse_algorithm("mbdg-da") == Algorithm::MbdgDa);
}

TEST_CASE("worst-domain risk and accuracy") {
  // Class-1 logit equals x, so a label-1 point at x has loss log(1 + e^-x).
  Architecture arch{{1, 2}, Activation::Tanh};
  const Predictor p(arch, ParameterVector(Predictor::layout_for(arch), {0, 1, 0, 0}));
  auto make = [](int env, std::vector<std::pair<double, std::size_t>> pts) {
    EnvironmentDataset ds{env, {}};
    for (auto [x, y] : pts) ds.examples.push_back({{x}, y, env});
    return ds;
  };
  const std::vector<EnvironmentDataset> envs{make(0, {{2.0, 1}}), make(1, {{-1.0, 1}}), make(2, {{0.5, 1}})};
  const auto w = worst_domain_risk(p, envs);
  CHECK(w.env == 1);
  CHECK(w.value == doctest::Approx(std::log(1.0 + std::exp(1.0))));
  CHECK(worst_domain_risk(p, std::vector<EnvironmentDataset>{envs[0]}).env == 0);
  const std::vector<EnvironmentDataset> tied{make(0, {{50.0, 1}}), make(1, {{60.0, 1}})};
  CHECK(worst_domain_accuracy(p, tied).env == 0);
  CHECK(worst_domain_accuracy(p, envs).value == 0.0);
  CHECK_THROWS_AS(worst_domain_risk(p, std::vector<EnvironmentDataset>{}), InvalidArgument);
}

TEST_CASE("regularized variant adds the generated loss only when asked") {
  const auto data = small_concept_data();
  const auto g = concept_shift_transform(ConceptShiftSpec{});
  const auto p = Predictor::initialize(Architecture::standard(5, 2), 2);
  auto reg = quick(Algorithm::MbdgReg);
  Rng br(3), gr(4);
  const auto batch = sample_minibatch(data, g, reg, br, gr);
  const auto dual = DualState::single(1.0, reg.margin, reg.dual_step);
  const double plain = primal_step(p, dual, batch, reg).loss;
  reg.reg_augment = true;
  const double augmented = primal_step(p, dual, batch, reg).loss;
  CHECK(plain == primal_step(p, dual, batch, quick(Algorithm::Erm)).loss);
  CHECK(augmented == doctest::Approx(primal_step(p, dual, batch, quick(Algorithm::Mbda)).loss).epsilon(1e-14));
  CHECK(augmented > plain);
}
