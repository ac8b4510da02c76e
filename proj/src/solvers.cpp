#include "mbdg/solvers.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <random>

namespace mbdg {

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Erm: return "erm";
    case Algorithm::Mbdg: return "mbdg";
    case Algorithm::Mbda: return "mbda";
    case Algorithm::MbdgDa: return "mbdg-da";
    case Algorithm::MbdgReg: return "mbdg-reg";
  }
  return "unknown";
}

Algorithm parse_algorithm(const std::string& name) {
  for (Algorithm a : {Algorithm::Erm, Algorithm::Mbdg, Algorithm::Mbda, Algorithm::MbdgDa,
                      Algorithm::MbdgReg}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("algorithm", "unknown algorithm '" + name + "'");
}

std::string to_string(ConstraintMode m) {
  return m == ConstraintMode::PairGenerated ? "pair-G-samples" : "against-clean";
}

ConstraintMode parse_constraint_mode(const std::string& name) {
  if (name == "pair-G-samples") return ConstraintMode::PairGenerated;
  if (name == "against-clean") return ConstraintMode::AgainstClean;
  throw ConfigError("constraint_mode", "unknown constraint mode '" + name + "'");
}

std::string to_string(DualMode m) { return m == DualMode::Single ? "single" : "per-env"; }

DualMode parse_dual_mode(const std::string& name) {
  if (name == "single") return DualMode::Single;
  if (name == "per-env") return DualMode::PerEnv;
  throw ConfigError("dual_mode", "unknown dual mode '" + name + "'");
}

void SolverConfig::validate() const {
  if (!(primal_step > 0.0)) throw ConfigError("primal_step", "primal step size must be > 0");
  if (!(dual_step >= 0.0)) throw ConfigError("dual_step", "dual step size must be >= 0");
  if (!(margin > 0.0)) throw ConfigError("margin", "margin gamma must be > 0");
  if (!(weight >= 0.0)) throw ConfigError("weight", "regularization weight must be >= 0");
  if (!(initial_dual >= 0.0)) throw ConfigError("initial_dual", "initial dual must be >= 0");
  if (steps < 1) throw ConfigError("steps", "need at least one step");
  if (batch_size < 1) throw ConfigError("batch_size", "batch size must be >= 1");
  if (!(loss.bound > 0.0)) throw ConfigError("loss_bound", "loss bound must be > 0");
  if (!(metric.smoothing >= 0.0)) throw ConfigError("kl_smoothing", "smoothing must be >= 0");
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("hidden", "hidden layer widths must be positive");
  }
}

void TrainTrace::write_csv(std::ostream& out) const {
  out << "step,loss,lambda";
  if (per_env_dual) {
    for (int e : envs) out << ",lambda_" << e;
  }
  out << ",gamma,distreg";
  for (int e : envs) out << ",distreg_" << e;
  out << '\n';
  const auto old_precision = out.precision(17);
  for (const auto& r : records) {
    double mean_lambda = 0.0;
    for (double l : r.lambda) mean_lambda += l;
    if (!r.lambda.empty()) mean_lambda /= static_cast<double>(r.lambda.size());
    out << r.step << ',' << r.loss << ',' << mean_lambda;
    if (per_env_dual) {
      for (double l : r.lambda) out << ',' << l;
    }
    out << ',' << r.gamma << ',' << r.dist_reg;
    for (double d : r.dist_reg_env) out << ',' << d;
    out << '\n';
  }
  out.precision(old_precision);
}

double lagrangian_value(double risk, std::span<const double> constraints, const DualState& dual) {
  if (constraints.empty()) return risk;
  if (!dual.is_single() && dual.lambda.size() != constraints.size()) {
    throw DimensionError("dual variable count does not match constraint count");
  }
  double penalty = 0.0;
  for (std::size_t e = 0; e < constraints.size(); ++e) {
    const double lambda = dual.is_single() ? dual.lambda[0] : dual.lambda[e];
    penalty += (constraints[e] - dual.margin) * lambda;
  }
  return risk + penalty / static_cast<double>(constraints.size());
}

double empirical_lagrangian(const Predictor& p, const DualState& dual,
                            std::span<const EnvironmentDataset> data,
                            const DomainTransformationModel& g,
                            std::span<const EnvironmentCode> codes, const DistanceMetric& m,
                            const LossSpec& spec) {
  if (data.empty()) throw InvalidArgument("empirical Lagrangian needs data");
  if (codes.size() != data.size()) throw DimensionError("need one code per environment");
  if (dual.lambda.empty()) throw DimensionError("dual state has no multipliers");
  std::vector<double> losses;
  for (const auto& ds : data) {
    for (const auto& ex : ds.examples) losses.push_back(cross_entropy(p.predict(ex.x), ex.y, spec));
  }
  if (losses.empty()) throw InvalidArgument("empirical Lagrangian of empty datasets");
  const double risk = pairwise_sum(losses) / static_cast<double>(losses.size());
  std::vector<double> constraints;
  for (std::size_t e = 0; e < data.size(); ++e) {
    constraints.push_back(constraint_value(p, data[e], g, codes[e], m));
  }
  return lagrangian_value(risk, constraints, dual);
}

namespace {

bool needs_extra(const SolverConfig& c) {
  return c.algorithm == Algorithm::MbdgDa || c.constraint_mode == ConstraintMode::PairGenerated;
}

std::size_t class_count(std::span<const EnvironmentDataset> data) {
  std::size_t classes = 2;
  for (const auto& ds : data) {
    for (const auto& ex : ds.examples) classes = std::max(classes, ex.y + 1);
  }
  return classes;
}

// The tape of one step, with probes: loss, distReg, distReg per env.
Tape build_step_tape(const Predictor& p, const DualState& dual, const Minibatch& batch,
                     const SolverConfig& config) {
  Tape tape(p.parameters().size());
  const NodeId clean = p.logits_node(tape, tape.constant(stack_rows(batch.clean)));
  NodeId loss = cross_entropy_node(tape, clean, batch.labels, config.loss);

  const NodeId gen = p.logits_node(tape, tape.constant(stack_rows(batch.generated)));
  std::optional<NodeId> extra;
  if (!batch.generated_extra.empty()) {
    extra = p.logits_node(tape, tape.constant(stack_rows(batch.generated_extra)));
  }
  const Algorithm alg = config.algorithm;
  if (alg == Algorithm::Mbda || alg == Algorithm::MbdgDa ||
      (alg == Algorithm::MbdgReg && config.reg_augment)) {
    loss = tape.add(loss, cross_entropy_node(tape, gen, batch.labels, config.loss));
  }
  if (alg == Algorithm::MbdgDa) {
    loss = tape.add(loss, cross_entropy_node(tape, *extra, batch.labels, config.loss));
  }

  const NodeId rows = config.constraint_mode == ConstraintMode::PairGenerated
                          ? distance_rows_node(tape, gen, *extra, config.metric)
                          : distance_rows_node(tape, clean, gen, config.metric);
  const NodeId dist = tape.mean(rows);
  std::vector<NodeId> per_env;
  const std::size_t total = batch.clean.size();
  for (std::size_t k = 0; k < batch.env_count; ++k) {
    Matrix mask(total, 1);
    for (std::size_t r = k * batch.per_env; r < (k + 1) * batch.per_env; ++r) mask(r, 0) = 1.0;
    per_env.push_back(tape.scale(tape.sum(tape.mul(rows, tape.constant(std::move(mask)))),
                                 1.0 / static_cast<double>(batch.per_env)));
  }

  NodeId objective = loss;
  if (alg == Algorithm::MbdgReg) {
    objective = tape.add(loss, tape.scale(dist, config.weight));
  } else if (alg == Algorithm::Mbdg || alg == Algorithm::MbdgDa) {
    if (dual.is_single()) {
      objective = tape.add(loss, tape.scale(dist, dual.lambda[0]));
    } else {
      if (dual.lambda.size() != batch.env_count) {
        throw DimensionError("per-env dual state does not match environment count");
      }
      NodeId penalty = tape.scale(per_env[0], dual.lambda[0]);
      for (std::size_t k = 1; k < per_env.size(); ++k) {
        penalty = tape.add(penalty, tape.scale(per_env[k], dual.lambda[k]));
      }
      objective = tape.add(loss, tape.scale(penalty, 1.0 / static_cast<double>(per_env.size())));
    }
  }
  tape.set_output(objective);
  tape.add_probe(loss);
  tape.add_probe(dist);
  for (NodeId n : per_env) tape.add_probe(n);
  return tape;
}

}  // namespace

Minibatch sample_minibatch(std::span<const EnvironmentDataset> data,
                           const DomainTransformationModel& g, const SolverConfig& config,
                           Rng& batch_rng, Rng& gen_rng) {
  Minibatch b;
  b.env_count = data.size();
  b.per_env = config.batch_size;
  const bool extra = needs_extra(config);
  for (const auto& ds : data) {
    if (ds.empty()) throw InvalidArgument("training environment has no examples");
    std::uniform_int_distribution<std::size_t> pick(0, ds.size() - 1);
    for (std::size_t j = 0; j < config.batch_size; ++j) {
      const auto& ex = ds.examples[pick(batch_rng)];
      b.clean.push_back(ex.x);
      b.labels.push_back(ex.y);
      b.generated.push_back(generate_image(g, ex.x, gen_rng));
      if (extra) b.generated_extra.push_back(generate_image(g, ex.x, gen_rng));
    }
  }
  return b;
}

ParameterVector primal_step(const Tape& objective, const ParameterVector& theta, double step) {
  const Evaluation ev = value_and_gradient(objective, theta.values());
  std::vector<double> next(theta.values().begin(), theta.values().end());
  for (std::size_t i = 0; i < next.size(); ++i) next[i] -= step * ev.gradient[i];
  return ParameterVector(theta.layout(), std::move(next));
}

StepResult primal_step(const Predictor& p, const DualState& dual, const Minibatch& batch,
                       const SolverConfig& config) {
  if (batch.clean.empty()) throw InvalidArgument("primal step on an empty minibatch");
  const Tape tape = build_step_tape(p, dual, batch, config);
  const Evaluation ev = value_and_gradient(tape, p.parameters().values());
  StepResult r;
  r.theta.assign(p.parameters().values().begin(), p.parameters().values().end());
  for (std::size_t i = 0; i < r.theta.size(); ++i) r.theta[i] -= config.primal_step * ev.gradient[i];
  require_finite(r.theta, "primal step");
  r.loss = ev.probes[0];
  r.dist_reg = ev.probes[1];
  r.dist_reg_env.assign(ev.probes.begin() + 2, ev.probes.end());
  return r;
}

double dual_step(double lambda, double dist_reg, double margin, double step) {
  return std::max(0.0, lambda + step * (dist_reg - margin));
}

DualState dual_step(const DualState& dual, std::span<const double> dist_reg) {
  if (dist_reg.size() != dual.lambda.size()) {
    throw DimensionError("constraint estimates do not match dual variables");
  }
  DualState next = dual;
  for (std::size_t e = 0; e < next.lambda.size(); ++e) {
    next.lambda[e] = dual_step(dual.lambda[e], dist_reg[e], dual.margin, dual.step);
  }
  return next;
}

TrainResult train(const SolverConfig& config, std::span<const EnvironmentDataset> train_data,
                  const DomainTransformationModel& g) {
  config.validate();
  if (train_data.empty()) throw InvalidArgument("need at least one training environment");
  const std::size_t dim = train_data.front().examples.at(0).x.size();

  Architecture arch;
  arch.layer_sizes.push_back(dim);
  arch.layer_sizes.insert(arch.layer_sizes.end(), config.hidden.begin(), config.hidden.end());
  arch.layer_sizes.push_back(class_count(train_data));
  arch.activation = config.activation;
  Predictor predictor = Predictor::initialize(arch, config.seed);

  std::seed_seq batch_seq{config.seed, std::uint64_t{1}};
  std::seed_seq gen_seq{config.seed, std::uint64_t{2}};
  Rng batch_rng(batch_seq);
  Rng gen_rng(gen_seq);

  const bool per_env = config.dual_mode == DualMode::PerEnv;
  DualState dual;
  dual.margin = config.margin;
  dual.step = config.dual_step;
  dual.lambda.assign(per_env ? train_data.size() : 1, config.initial_dual);
  if (!config.has_dual_ascent()) {
    dual.lambda.assign(dual.lambda.size(),
                       config.algorithm == Algorithm::MbdgReg ? config.weight : 0.0);
  }

  TrainResult result{predictor, {}};
  result.trace.per_env_dual = per_env;
  for (const auto& ds : train_data) result.trace.envs.push_back(ds.env);
  result.trace.records.reserve(config.steps);

  for (std::size_t t = 0; t < config.steps; ++t) {
    const Minibatch batch = sample_minibatch(train_data, g, config, batch_rng, gen_rng);
    StepResult step;
    Predictor next = predictor;
    try {
      step = primal_step(predictor, dual, batch, config);
      next = predictor.with_parameters(step.theta);
    } catch (const NonFiniteError& e) {
      throw TrainingAborted("step " + std::to_string(t) + ": " + e.what(), result.trace);
    }
    TraceRecord rec;
    rec.step = t;
    rec.loss = step.loss;
    rec.lambda = dual.lambda;
    rec.gamma = config.margin;
    rec.dist_reg = step.dist_reg;
    rec.dist_reg_env = step.dist_reg_env;
    result.trace.records.push_back(std::move(rec));

    predictor = std::move(next);
    if (config.has_dual_ascent()) {
      if (per_env) {
        dual = dual_step(dual, step.dist_reg_env);
      } else {
        const double d[1] = {step.dist_reg};
        dual = dual_step(dual, d);
      }
    }
  }
  result.predictor = std::move(predictor);
  return result;
}

WorstDomain worst_domain_risk(const Predictor& p, std::span<const EnvironmentDataset> datasets,
                              const LossSpec& spec) {
  if (datasets.empty()) throw InvalidArgument("worst-domain risk needs datasets");
  WorstDomain w{empirical_risk(p, datasets[0], spec), datasets[0].env};
  for (std::size_t i = 1; i < datasets.size(); ++i) {
    const double r = empirical_risk(p, datasets[i], spec);
    if (r > w.value) w = {r, datasets[i].env};
  }
  return w;
}

WorstDomain worst_domain_accuracy(const Predictor& p, std::span<const EnvironmentDataset> datasets) {
  if (datasets.empty()) throw InvalidArgument("worst-domain accuracy needs datasets");
  WorstDomain w{accuracy(p, datasets[0]), datasets[0].env};
  for (std::size_t i = 1; i < datasets.size(); ++i) {
    const double a = accuracy(p, datasets[i]);
    if (a < w.value) w = {a, datasets[i].env};
  }
  return w;
}

}  // namespace mbdg
