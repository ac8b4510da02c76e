#include "mbdg/experiment.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <set>
#include <sstream>

namespace mbdg {

namespace {

constexpr std::uint64_t kTestSeedMix = 0x9E3779B97F4A7C15ULL;

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ' ';
    if constexpr (std::is_floating_point_v<T>) {
      os << fmt(v[i]);
    } else {
      os << v[i];
    }
  }
  return os.str();
}

std::vector<std::string> tokens(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string t; is >> t;) out.push_back(t);
  return out;
}

double to_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto r = std::from_chars(text.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end || !std::isfinite(v)) {
    throw ConfigError(key, "expected a finite number, got '" + text + "'");
  }
  return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto r = std::from_chars(text.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) {
    throw ConfigError(key, "expected a nonnegative integer, got '" + text + "'");
  }
  return v;
}

std::vector<double> to_doubles(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const auto& t : tokens(text)) out.push_back(to_double(key, t));
  return out;
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& t : tokens(text)) out.push_back(static_cast<std::size_t>(to_u64(key, t)));
  return out;
}

bool to_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(key, "expected a boolean, got '" + text + "'");
}

/// Looks up keys of one section and rejects any that were never read.
class SectionReader {
 public:
  SectionReader(std::string name, const ConfigSection* section)
      : name_(std::move(name)), section_(section) {}

  std::optional<std::string> get(const std::string& key) {
    used_.insert(key);
    if (!section_) return std::nullopt;
    for (const auto& [k, v] : *section_) {
      if (k == key) return v;
    }
    return std::nullopt;
  }
  std::string qualified(const std::string& key) const { return name_ + "." + key; }

  void number(const std::string& key, double& out) {
    if (auto v = get(key)) out = to_double(qualified(key), *v);
  }
  void size(const std::string& key, std::size_t& out) {
    if (auto v = get(key)) out = static_cast<std::size_t>(to_u64(qualified(key), *v));
  }

  void finish() const {
    if (!section_) return;
    for (const auto& [k, v] : *section_) {
      if (!used_.count(k)) throw ConfigError(qualified(k), "unknown key");
    }
  }

 private:
  std::string name_;
  const ConfigSection* section_;
  std::set<std::string> used_;
};

DomainTransformationModel parse_transform(SectionReader& r, const ExperimentConfig& c) {
  const auto kind = r.get("kind");
  if (!kind) {
    return c.task == TaskKind::ConceptShift ? concept_shift_transform(c.concept_shift)
                                            : c.covariate_shift.transform;
  }
  try {
    if (*kind == "color-flip") {
      r.finish();
      return concept_shift_transform(c.concept_shift);
    }
    if (*kind == "rotation") {
      std::vector<std::size_t> plane{0, 1};
      if (auto v = r.get("plane")) plane = to_sizes(r.qualified("plane"), *v);
      if (plane.size() != 2) throw ConfigError(r.qualified("plane"), "expected two indices");
      double lo = 0.0, hi = 2.0 * std::numbers::pi;
      r.number("min_angle", lo);
      r.number("max_angle", hi);
      RotationModel m{plane[0], plane[1], lo, hi};
      r.finish();
      return DomainTransformationModel(m);
    }
    if (*kind == "color-resample") {
      ColorResampleModel m;
      if (auto v = r.get("coords")) m.coords = to_sizes(r.qualified("coords"), *v);
      r.number("scale", m.scale);
      if (auto v = r.get("one_hot")) m.one_hot = to_bool(r.qualified("one_hot"), *v);
      r.finish();
      return DomainTransformationModel(m);
    }
    if (*kind == "brightness-contrast") {
      BrightnessContrastModel m;
      if (auto v = r.get("coords")) m.coords = to_sizes(r.qualified("coords"), *v);
      r.number("min_contrast", m.min_contrast);
      r.number("max_contrast", m.max_contrast);
      r.number("min_brightness", m.min_brightness);
      r.number("max_brightness", m.max_brightness);
      r.finish();
      return DomainTransformationModel(m);
    }
  } catch (const InvalidArgument& e) {
    throw ConfigError("transform", e.what());
  }
  throw ConfigError("transform.kind", "unknown transform kind '" + *kind + "'");
}

void parse_solver(SectionReader& r, SolverConfig& s) {
  if (auto v = r.get("algorithm")) s.algorithm = parse_algorithm(*v);
  r.number("primal_step", s.primal_step);
  r.number("dual_step", s.dual_step);
  r.number("margin", s.margin);
  r.number("weight", s.weight);
  if (auto v = r.get("reg_augment")) s.reg_augment = to_bool(r.qualified("reg_augment"), *v);
  r.size("batch_size", s.batch_size);
  r.size("steps", s.steps);
  if (auto v = r.get("constraint_mode")) s.constraint_mode = parse_constraint_mode(*v);
  if (auto v = r.get("dual_mode")) s.dual_mode = parse_dual_mode(*v);
  r.number("initial_dual", s.initial_dual);
  if (auto v = r.get("hidden")) s.hidden = to_sizes(r.qualified("hidden"), *v);
  if (auto v = r.get("activation")) {
    try {
      s.activation = parse_activation(*v);
    } catch (const InvalidArgument& e) {
      throw ConfigError(r.qualified("activation"), e.what());
    }
  }
  r.number("loss_bound", s.loss.bound);
  s.metric.bound = s.loss.bound;
  if (auto v = r.get("metric")) {
    if (*v == "kl") {
      s.metric.kind = MetricKind::KL;
    } else if (*v == "tv") {
      s.metric.kind = MetricKind::TotalVariation;
    } else {
      throw ConfigError(r.qualified("metric"), "expected 'kl' or 'tv'");
    }
  }
  r.number("kl_smoothing", s.metric.smoothing);
  if (auto v = r.get("metric_reversed")) s.metric.reversed = to_bool(r.qualified("metric_reversed"), *v);
  r.finish();
  s.validate();
}

std::vector<EnvironmentDataset> without(const std::vector<EnvironmentDataset>& all, int env) {
  std::vector<EnvironmentDataset> out;
  for (const auto& ds : all) {
    if (ds.env != env) out.push_back(ds);
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : pairwise_sum(v) / static_cast<double>(v.size());
}

const EnvironmentDataset& find_env(const std::vector<EnvironmentDataset>& all, int env) {
  for (const auto& ds : all) {
    if (ds.env == env) return ds;
  }
  throw InvalidArgument("environment " + std::to_string(env) + " not found");
}

}  // namespace

std::string to_string(TaskKind k) {
  return k == TaskKind::ConceptShift ? "concept-shift" : "covariate-shift";
}

std::size_t ExperimentConfig::num_envs() const {
  return task == TaskKind::ConceptShift ? concept_shift.num_envs() : covariate_shift.num_envs();
}

ExperimentConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config", e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  ExperimentConfig c;
  static const std::set<std::string> known{"task", "transform", "solver", "run"};
  for (const auto& [name, sub] : tree) {
    if (sub.empty()) throw ConfigError(name, "keys must live inside a section");
    if (!known.count(name)) throw ConfigError(name, "unknown section");
    ConfigSection& section = c.sections[name];
    for (const auto& [k, v] : sub) section.emplace_back(k, v.data());
  }
  auto section = [&](const std::string& name) -> const ConfigSection* {
    auto it = c.sections.find(name);
    return it == c.sections.end() ? nullptr : &it->second;
  };
  if (!section("task")) throw ConfigError("task", "missing [task] section");

  SectionReader task("task", section("task"));
  const auto kind = task.get("kind");
  if (!kind) throw ConfigError("task.kind", "missing task kind");
  try {
    if (*kind == "concept-shift") {
      c.task = TaskKind::ConceptShift;
      auto& s = c.concept_shift;
      task.number("shape_accuracy", s.shape_accuracy);
      if (auto v = task.get("color_agreement")) s.color_agreement = to_doubles("task.color_agreement", *v);
      task.size("n_per_env", s.n_per_env);
      task.number("shape_offset", s.shape_offset);
      task.number("shape_sigma", s.shape_sigma);
      task.number("noise_sigma", s.noise_sigma);
      task.number("color_scale", s.color_scale);
      task.size("n_test", c.n_test);
      s.validate();
    } else if (*kind == "covariate-shift") {
      c.task = TaskKind::CovariateShift;
      std::vector<double> train{0.0, std::numbers::pi / 6, std::numbers::pi / 3};
      std::vector<double> test{std::numbers::pi / 2};
      if (auto v = task.get("train_angles")) train = to_doubles("task.train_angles", *v);
      if (auto v = task.get("test_angles")) test = to_doubles("task.test_angles", *v);
      std::vector<EnvironmentCode> train_codes, test_codes;
      for (double a : train) train_codes.push_back({a});
      for (double a : test) test_codes.push_back({a});
      c.covariate_shift = rotation_task_spec(train_codes, test_codes);
      task.number("sigma", c.covariate_shift.sigma);
      task.size("n_per_env", c.n_per_env);
      c.n_test = 2000;
      task.size("n_test", c.n_test);
      c.covariate_shift.validate();
    } else {
      throw ConfigError("task.kind", "unknown task kind '" + *kind + "'");
    }
  } catch (const InvalidArgument& e) {
    throw ConfigError("task", e.what());
  } catch (const DimensionError& e) {
    throw ConfigError("task", e.what());
  }
  task.finish();
  if (c.n_test == 0 || c.n_per_env == 0) throw ConfigError("task.n_test", "sample counts must be positive");

  SectionReader transform("transform", section("transform"));
  c.transform = parse_transform(transform, c);
  transform.finish();
  if (c.task == TaskKind::CovariateShift) {
    c.covariate_shift.transform = c.transform;
    try {
      c.covariate_shift.validate();
    } catch (const Error& e) {
      throw ConfigError("transform", e.what());
    }
  } else if (c.transform.min_input_dim() > ConceptShiftSpec::kDim) {
    throw ConfigError("transform", "transform acts outside the feature space");
  }

  SectionReader solver("solver", section("solver"));
  parse_solver(solver, c.solver);

  SectionReader run("run", section("run"));
  if (auto v = run.get("seed")) c.seed = to_u64("run.seed", *v);
  if (auto v = run.get("out")) c.out_dir = *v;
  if (auto v = run.get("holdout")) c.holdout = static_cast<int>(to_u64("run.holdout", *v));
  if (auto v = run.get("label")) c.label = *v;
  run.size("invariance_samples", c.invariance_samples);
  run.finish();
  if (c.invariance_samples == 0) throw ConfigError("run.invariance_samples", "must be positive");
  if (c.holdout && static_cast<std::size_t>(*c.holdout) >= c.num_envs()) {
    throw ConfigError("holdout", "no environment with id " + std::to_string(*c.holdout));
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open '" + path.string() + "'");
  return parse_config(in);
}

ExperimentData make_data(const ExperimentConfig& config, std::optional<int> holdout) {
  if (holdout && (*holdout < 0 || static_cast<std::size_t>(*holdout) >= config.num_envs())) {
    throw ConfigError("holdout", "no environment with id " + std::to_string(*holdout));
  }
  ExperimentData d;
  const std::uint64_t test_seed = config.seed ^ kTestSeedMix;
  if (config.task == TaskKind::ConceptShift) {
    const auto all = gen_concept_shift(config.concept_shift, config.seed);
    ConceptShiftSpec test_spec = config.concept_shift;
    test_spec.n_per_env = config.n_test;
    d.test = gen_concept_shift(test_spec, test_seed);
    const int h = holdout.value_or(static_cast<int>(config.num_envs()) - 1);
    d.train = without(all, h);
    d.heldout = {h};
  } else {
    const auto all = gen_covariate_shift(config.covariate_shift, config.n_per_env, config.seed);
    d.test = gen_covariate_shift(config.covariate_shift, config.n_test, test_seed);
    if (holdout) {
      d.train = without(all, *holdout);
      d.heldout = {*holdout};
    } else {
      const auto n_train = config.covariate_shift.train_codes.size();
      d.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
      for (std::size_t i = n_train; i < all.size(); ++i) d.heldout.push_back(all[i].env);
    }
  }
  return d;
}

void write_datagen(const ExperimentConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto data = make_data(config, config.holdout);
  std::vector<EnvironmentDataset> train_all;
  if (config.task == TaskKind::ConceptShift) {
    train_all = gen_concept_shift(config.concept_shift, config.seed);
  } else {
    train_all = gen_covariate_shift(config.covariate_shift, config.n_per_env, config.seed);
  }
  std::ofstream train(dir / "train.txt");
  write_dataset(train, train_all);
  std::ofstream test(dir / "test.txt");
  write_dataset(test, data.test);
}

void RunSummary::add(const std::string& key, double value) { add(key, fmt(value)); }

std::optional<std::string> RunSummary::get(const std::string& key) const {
  for (const auto& [k, v] : fields) {
    if (k == key) return v;
  }
  if (key == "wall_clock_seconds") return fmt(wall_clock_seconds);
  return std::nullopt;
}

void RunSummary::write(std::ostream& out) const {
  for (const auto& [k, v] : fields) out << k << '=' << v << '\n';
  out << "wall_clock_seconds=" << fmt(wall_clock_seconds) << '\n';
}

void RunSummary::write_json(std::ostream& out) const {
  nlohmann::ordered_json j;
  for (const auto& [k, v] : fields) {
    double num = 0.0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), num);
    if (r.ec == std::errc() && r.ptr == v.data() + v.size()) {
      j[k] = num;
    } else {
      j[k] = v;
    }
  }
  j["wall_clock_seconds"] = wall_clock_seconds;
  out << j.dump(2) << '\n';
}

namespace {

SolverConfig seeded_solver(const ExperimentConfig& config) {
  SolverConfig s = config.solver;
  s.seed = config.seed;
  return s;
}

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  RunOutcome out{TrainResult{Predictor::zeros(Architecture::standard(1, 2)), {}},
                 make_data(config, config.holdout), {}};
  const SolverConfig solver = seeded_solver(config);
  out.result = train(solver, out.data.train, config.transform);
  const Predictor& p = out.result.predictor;
  RunSummary& s = out.summary;

  s.add("task", to_string(config.task));
  s.add("label", config.display_label());
  s.add("algorithm", to_string(solver.algorithm));
  s.add("seed", std::to_string(config.seed));
  s.add("heldout_envs", join(out.data.heldout));
  std::vector<int> train_envs;
  for (const auto& ds : out.data.train) train_envs.push_back(ds.env);
  s.add("train_envs", join(train_envs));
  s.add("steps", std::to_string(solver.steps));

  for (const auto& ds : out.data.train) {
    s.add("acc_train_env_" + std::to_string(ds.env), accuracy(p, ds));
    s.add("risk_train_env_" + std::to_string(ds.env), empirical_risk(p, ds, solver.loss));
  }
  std::vector<double> test_acc, heldout_acc;
  for (const auto& ds : out.data.test) {
    const double acc = accuracy(p, ds);
    test_acc.push_back(acc);
    if (std::find(out.data.heldout.begin(), out.data.heldout.end(), ds.env) != out.data.heldout.end()) {
      heldout_acc.push_back(acc);
    }
    s.add("acc_test_env_" + std::to_string(ds.env), acc);
    s.add("risk_test_env_" + std::to_string(ds.env), empirical_risk(p, ds, solver.loss));
  }
  s.add("heldout_accuracy", mean_of(heldout_acc));
  s.add("avg_test_accuracy", mean_of(test_acc));
  const auto worst_risk = worst_domain_risk(p, out.data.test, solver.loss);
  s.add("worst_domain_risk", worst_risk.value);
  s.add("worst_domain_risk_env", std::to_string(worst_risk.env));
  const auto worst_acc = worst_domain_accuracy(p, out.data.test);
  s.add("worst_domain_accuracy", worst_acc.value);
  s.add("worst_domain_accuracy_env", std::to_string(worst_acc.env));

  const auto& last = out.result.trace.records.back();
  s.add("final_lambda", join(last.lambda));
  for (std::size_t k = 0; k < out.data.train.size(); ++k) {
    const auto& ds = out.data.train[k];
    const EnvironmentDataset one[1] = {ds};
    const auto inv = measure_g_invariance(p, one, config.transform, solver.metric,
                                          config.invariance_samples, solver.constraint_mode,
                                          config.seed + 17 + k);
    s.add("final_distreg_env_" + std::to_string(ds.env), inv.mean);
  }
  for (const auto& [name, section] : config.sections) {
    for (const auto& [k, v] : section) s.add("config." + name + "." + k, v);
  }
  s.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

void write_trace(const std::filesystem::path& dir, const TrainTrace& trace) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "trace.csv");
  trace.write_csv(out);
}

void write_run_artifacts(const std::filesystem::path& dir, const RunOutcome& outcome) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "summary.txt");
    outcome.summary.write(out);
  }
  {
    std::ofstream out(dir / "summary.json");
    outcome.summary.write_json(out);
  }
  write_trace(dir, outcome.result.trace);
  std::ofstream out(dir / "predictor.txt");
  write_predictor(out, outcome.result.predictor);
}

InvarianceSummary measure_invariance(const ExperimentConfig& config, const Predictor& p,
                                     const ExperimentData& data) {
  std::vector<EnvironmentDataset> held;
  for (int e : data.heldout) held.push_back(find_env(data.test, e));
  return measure_g_invariance(p, held, config.transform, config.solver.metric,
                              config.invariance_samples, config.solver.constraint_mode,
                              config.seed ^ kTestSeedMix);
}

void ComparisonTable::write_csv(std::ostream& out) const {
  out << "algorithm";
  for (int e : envs) out << ",env_" << e;
  out << ",Avg\n";
  for (const auto& row : rows) {
    out << row.label;
    for (double a : row.heldout_accuracy) out << ',' << fmt(a);
    out << ',' << fmt(row.average) << '\n';
  }
}

ComparisonTable compare_configs(const std::vector<ExperimentConfig>& configs) {
  if (configs.size() < 2) throw ConfigError("config", "compare needs at least two configs");
  auto sorted_section = [](const ExperimentConfig& c, const std::string& name) {
    auto it = c.sections.find(name);
    ConfigSection s = it == c.sections.end() ? ConfigSection{} : it->second;
    std::sort(s.begin(), s.end());
    return s;
  };
  for (std::size_t i = 1; i < configs.size(); ++i) {
    for (const char* name : {"task", "transform"}) {
      if (sorted_section(configs[i], name) != sorted_section(configs[0], name)) {
        throw ConfigError(name, "config " + std::to_string(i + 1) +
                                    " does not share the first config's [" + name + "] section");
      }
    }
  }
  ComparisonTable table;
  for (std::size_t e = 0; e < configs[0].num_envs(); ++e) table.envs.push_back(static_cast<int>(e));
  for (const auto& c : configs) {
    ComparisonRow row;
    row.label = c.display_label();
    const SolverConfig solver = seeded_solver(c);
    for (int h : table.envs) {
      const auto data = make_data(c, h);
      const auto result = train(solver, data.train, c.transform);
      row.heldout_accuracy.push_back(accuracy(result.predictor, find_env(data.test, h)));
    }
    row.average = mean_of(row.heldout_accuracy);
    table.rows.push_back(std::move(row));
  }
  return table;
}

const std::vector<std::string>& verify_suite_names() {
  static const std::vector<std::string> names{"duality", "perturbation", "empirical-gap",
                                              "schedule", "slackness"};
  return names;
}

namespace {

VerifyCheck check(std::string name, bool passed, std::string detail) {
  return {std::move(name), passed, std::move(detail)};
}

std::vector<VerifyCheck> duality_suite() {
  std::vector<VerifyCheck> out;
  std::mt19937_64 rng(20240601);
  const auto dual1 = uniform_dual_grid(1, 10.0, 0.01);
  const auto dual2 = uniform_dual_grid(2, 10.0, 0.25);
  double worst = -1e300;
  for (int k = 0; k < 100; ++k) {
    const std::size_t envs = 1 + k % 2;
    const auto spec = random_grid_spec(rng, 40, envs);
    const auto r = duality_gap(spec, spec.margin, envs == 1 ? dual1 : dual2);
    if (r.feasible) worst = std::max(worst, r.dual - r.primal);
  }
  out.push_back(check("weak duality on 100 random specs", worst <= 1e-9,
                      "max(D - P) = " + fmt(worst)));

  const auto line = convex_line_instance(1e-3);
  const auto r = duality_gap(line, line.margin, dual1);
  out.push_back(check("convex 1-d instance gap <= 2e-3", std::abs(r.gap) <= 2e-3,
                      "P = " + fmt(r.primal) + ", D = " + fmt(r.dual)));
  out.push_back(check("convex 1-d instance optimum 0.16", std::abs(r.primal - 0.16) <= 1e-9,
                      "P = " + fmt(r.primal)));

  std::size_t violations = 0;
  double smallest = 1e300;
  for (int k = 0; k < 100; ++k) {
    const auto fine = random_convex_spec(rng);
    const auto coarse = fine.subgrid(10);
    const auto s = parameterization_sandwich(fine, coarse, fine.margin,
                                             with_breakpoints(dual1, coarse));
    violations += s.lower_bound_holds ? 0 : 1;
    smallest = std::min(smallest, s.upper_gap);
  }
  out.push_back(check("sandwich lower bound on 100 random specs", violations == 0,
                      std::to_string(violations) + " violations, min(D_coarse - P_fine) = " +
                          fmt(smallest)));
  return out;
}

std::vector<VerifyCheck> perturbation_suite() {
  std::vector<VerifyCheck> out;
  const auto dual1 = uniform_dual_grid(1, 10.0, 0.01);
  const auto line = convex_line_instance(1e-3);
  const double gammas[] = {0.0, 0.05, 0.1};
  const auto r = check_perturbation(line, gammas, dual1);
  const double expect[] = {0.25, 0.2025, 0.16};
  double err = 0.0;
  for (std::size_t i = 0; i < 3; ++i) err = std::max(err, std::abs(r.curve[i].primal - expect[i]));
  out.push_back(check("1-d curve equals (0.25, 0.2025, 0.16)", err <= 1e-9, "max error " + fmt(err)));
  out.push_back(check("1-d curve non-increasing", r.non_increasing, ""));
  out.push_back(check("1-d P*(0) - P*(gamma) <= gamma ||lambda*||", r.lipschitz_bound_holds,
                      "excess " + fmt(r.worst_bound_excess)));

  const auto pop = two_gaussian_gap_population(4000, 7);
  const auto kl = pop.population_spec();
  const double kl_gammas[] = {0.0, 0.01, 0.025, 0.05, 0.1, 0.2};
  const auto k = check_perturbation(kl, kl_gammas, dual1);
  out.push_back(check("KL spec curve non-increasing", k.non_increasing, ""));
  out.push_back(check("KL spec P*(0) equals best exactly invariant risk", k.zero_margin_matches,
                      "P*(0) = " + fmt(k.curve[0].primal) +
                          ", invariant optimum = " + fmt(k.exact_invariance_value)));
  out.push_back(check("KL spec Lipschitz bound", k.lipschitz_bound_holds,
                      "excess " + fmt(k.worst_bound_excess)));

  std::mt19937_64 rng(77);
  bool monotone = true;
  for (int t = 0; t < 100; ++t) {
    const auto spec = random_grid_spec(rng, 40, 1 + t % 3);
    double prev = 1e300;
    for (double g = 0.0; g <= 1.0; g += 0.05) {
      const auto p = solve_primal_grid(spec, g);
      if (!p.feasible) continue;
      monotone = monotone && p.value <= prev;
      prev = p.value;
    }
  }
  out.push_back(check("curve non-increasing on 100 random specs", monotone, ""));
  return out;
}

std::vector<VerifyCheck> empirical_gap_suite() {
  const auto pop = two_gaussian_gap_population(20000, 3);
  const std::size_t sizes[] = {100, 400, 1600, 6400};
  const auto r = empirical_gap_experiment(pop, sizes, 20, 11, uniform_dual_grid(1, 10.0, 0.01));
  std::string detail;
  for (const auto& p : r.points) detail += std::to_string(p.n) + ":" + fmt(p.mean_deviation) + " ";
  return {check("mean |D - D_N| strictly decreasing", r.strictly_decreasing, detail),
          check("final / initial deviation <= 1/3", r.final_over_initial <= 1.0 / 3.0,
                "ratio " + fmt(r.final_over_initial))};
}

std::vector<VerifyCheck> schedule_suite() {
  const auto line = convex_line_instance(1e-3);
  ScheduleOptions o;
  o.kappa = 0.5;
  o.bound = 1.5;
  o.eta = 2.0 * o.kappa / (o.bound * o.bound);
  const auto pos = primal_dual_schedule_check(line, o);
  ScheduleOptions neg = o;
  neg.dual_step = 0.0;
  const auto n = primal_dual_schedule_check(line, neg);
  auto loose = line;
  loose.margin = 2.0;
  const auto f = primal_dual_schedule_check(loose, o);
  return {check("eta at bound reaches gap <= 0.05 within T", pos.passed,
                "T = " + std::to_string(pos.horizon) + ", gap = " + fmt(pos.gap)),
          check("negative control without dual ascent misses the bound", !n.passed,
                "gap = " + fmt(n.gap)),
          check("feasible unconstrained optimum converges after one step",
                f.gap_trace.front() <= 1e-12, "gap = " + fmt(f.gap_trace.front()))};
}

std::vector<VerifyCheck> slackness_suite() {
  const auto dual1 = uniform_dual_grid(1, 10.0, 0.01);
  const auto line = convex_line_instance(1e-3);
  const auto active = complementary_slackness_check(line, line.margin, dual1);
  const auto inactive = complementary_slackness_check(line, 2.0, dual1);
  std::mt19937_64 rng(99);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const auto spec = random_convex_spec(rng, 1e-3);
    worst = std::max(worst, complementary_slackness_check(spec, spec.margin, dual1).residual);
  }
  return {check("active constraint residual <= 1e-3", active.passed,
                "lambda = " + fmt(active.lambda[0]) + ", residual = " + fmt(active.residual)),
          check("inactive constraint has zero multiplier",
                inactive.lambda[0] == 0.0 && inactive.residual == 0.0,
                "lambda = " + fmt(inactive.lambda[0])),
          check("random convex specs residual <= 1e-3", worst <= 1e-3, "max " + fmt(worst))};
}

}  // namespace

std::vector<VerifyCheck> run_verify_suite(const std::string& name) {
  if (name == "duality") return duality_suite();
  if (name == "perturbation") return perturbation_suite();
  if (name == "empirical-gap") return empirical_gap_suite();
  if (name == "schedule") return schedule_suite();
  if (name == "slackness") return slackness_suite();
  throw InvalidArgument("unknown verify suite '" + name + "'");
}

}  // namespace mbdg
