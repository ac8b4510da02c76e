#include "mbdg/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

namespace mbdg {

namespace {

void check_probability(double p, const std::string& what) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument(what + " must lie in [0, 1]");
}

void write_number(std::ostream& out, double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.write(buf, res.ptr - buf);
}

}  // namespace

std::size_t CovariateShiftSpec::dim() const {
  if (class_means.empty() || class_means.front().empty()) return 0;
  return class_means.front().front().size();
}

const EnvironmentCode& CovariateShiftSpec::code(int env) const {
  const auto i = static_cast<std::size_t>(env);
  if (env < 0 || i >= num_envs()) throw InvalidArgument("unknown environment id");
  return i < train_codes.size() ? train_codes[i] : test_codes[i - train_codes.size()];
}

void CovariateShiftSpec::validate() const {
  if (class_means.size() < 2) throw InvalidArgument("covariate shift spec needs two classes");
  if (class_prior.size() != class_means.size()) {
    throw InvalidArgument("class prior size does not match class count");
  }
  double total = 0.0;
  for (double p : class_prior) {
    check_probability(p, "class prior");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("class priors must sum to 1");
  const std::size_t d = dim();
  for (const auto& comps : class_means) {
    if (comps.empty()) throw InvalidArgument("every class needs a mixture component");
    for (const auto& m : comps) {
      if (m.size() != d) throw DimensionError("class means differ in dimension");
      require_finite(m, "class mean");
    }
  }
  if (!(sigma > 0.0)) throw InvalidArgument("sigma must be positive");
  if (d < transform.min_input_dim()) throw DimensionError("transform acts outside feature space");
  for (const auto* codes : {&train_codes, &test_codes}) {
    for (const auto& e : *codes) {
      if (e.size() != transform.code_dim()) throw DimensionError("environment code dimension");
    }
  }
  for (const auto& a : train_codes) {
    for (const auto& b : test_codes) {
      if (a == b) throw InvalidArgument("train and test environment lists must be disjoint");
    }
  }
}

void ConceptShiftSpec::validate() const {
  check_probability(shape_accuracy, "shape accuracy");
  for (double p : color_agreement) check_probability(p, "color agreement");
  if (color_agreement.empty()) throw InvalidArgument("concept shift spec needs environments");
  if (n_per_env == 0) throw InvalidArgument("n_per_env must be at least 1");
  if (!(shape_sigma >= 0.0) || !(noise_sigma >= 0.0)) throw InvalidArgument("negative spread");
}

CovariateShiftSpec rotation_task_spec(std::vector<EnvironmentCode> train_codes,
                                      std::vector<EnvironmentCode> test_codes) {
  constexpr double kRadius = 2.0;
  constexpr double kInvariant = 0.5;
  CovariateShiftSpec spec;
  spec.class_means = {
      {{kRadius, 0.0, -kInvariant}, {-kRadius, 0.0, -kInvariant}},
      {{0.0, kRadius, kInvariant}, {0.0, -kRadius, kInvariant}},
  };
  spec.sigma = 0.5;
  spec.class_prior = {0.5, 0.5};
  spec.transform = rotation_model(0, 1, 0.0, 2.0 * std::numbers::pi, 3);
  spec.train_codes = std::move(train_codes);
  spec.test_codes = std::move(test_codes);
  spec.validate();
  return spec;
}

DomainTransformationModel concept_shift_transform(const ConceptShiftSpec& spec) {
  return color_resample_model({ConceptShiftSpec::kRedCoord, ConceptShiftSpec::kGreenCoord},
                              spec.color_scale, /*one_hot=*/true);
}

std::vector<LabeledExample> sample_base(const CovariateShiftSpec& spec, std::size_t n,
                                        std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::discrete_distribution<std::size_t> pick_class(spec.class_prior.begin(),
                                                     spec.class_prior.end());
  std::normal_distribution<double> noise(0.0, spec.sigma);
  std::vector<LabeledExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = pick_class(rng);
    const auto& comps = spec.class_means[y];
    const std::size_t c =
        std::uniform_int_distribution<std::size_t>(0, comps.size() - 1)(rng);
    LabeledExample ex;
    ex.y = y;
    ex.x = comps[c];
    for (double& v : ex.x) v += noise(rng);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<EnvironmentDataset> gen_covariate_shift(const CovariateShiftSpec& spec,
                                                    std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("n must be at least 1");
  const std::vector<LabeledExample> base = sample_base(spec, n, seed);
  std::vector<EnvironmentDataset> out;
  for (std::size_t env = 0; env < spec.num_envs(); ++env) {
    EnvironmentDataset ds;
    ds.env = static_cast<int>(env);
    const EnvironmentCode& e = spec.code(ds.env);
    ds.examples.reserve(n);
    for (const auto& b : base) {
      ds.examples.push_back(LabeledExample{apply(spec.transform, b.x, e), b.y, ds.env});
    }
    out.push_back(std::move(ds));
  }
  return out;
}

EnvironmentDataset gen_concept_shift_env(const ConceptShiftSpec& spec, int env, std::size_t n,
                                         std::uint64_t seed) {
  spec.validate();
  if (env < 0 || static_cast<std::size_t>(env) >= spec.num_envs()) {
    throw InvalidArgument("unknown environment id");
  }
  const double agreement = spec.color_agreement[static_cast<std::size_t>(env)];
  Rng rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution shape_keeps(spec.shape_accuracy);
  std::bernoulli_distribution color_keeps(agreement);
  std::normal_distribution<double> unit(0.0, 1.0);

  EnvironmentDataset ds;
  ds.env = env;
  ds.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t shape = coin(rng) ? 1 : 0;
    const std::size_t y = shape_keeps(rng) ? shape : 1 - shape;
    const std::size_t color = color_keeps(rng) ? y : 1 - y;
    const double center = shape == 1 ? spec.shape_offset : -spec.shape_offset;
    LabeledExample ex;
    ex.x.assign(ConceptShiftSpec::kDim, 0.0);
    ex.x[0] = center + spec.shape_sigma * unit(rng);
    ex.x[1] = center + spec.shape_sigma * unit(rng);
    ex.x[2] = spec.noise_sigma * unit(rng);
    ex.x[color == 0 ? ConceptShiftSpec::kRedCoord : ConceptShiftSpec::kGreenCoord] =
        spec.color_scale;
    ex.y = y;
    ex.env = env;
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

std::vector<EnvironmentDataset> gen_concept_shift(const ConceptShiftSpec& spec,
                                                  std::uint64_t seed) {
  std::vector<EnvironmentDataset> out;
  for (std::size_t env = 0; env < spec.num_envs(); ++env) {
    out.push_back(gen_concept_shift_env(spec, static_cast<int>(env), spec.n_per_env, seed + env));
  }
  return out;
}

double bayes_oracle(const ConceptShiftSpec& spec, OraclePolicy policy, int env) {
  spec.validate();
  if (env < 0 || static_cast<std::size_t>(env) >= spec.num_envs()) {
    throw InvalidArgument("unknown environment id");
  }
  const double rho = spec.shape_accuracy;
  const double p = spec.color_agreement[static_cast<std::size_t>(env)];
  switch (policy) {
    case OraclePolicy::ShapeOnly:
      return rho;
    case OraclePolicy::ColorOnly:
      return p;
    case OraclePolicy::Joint: {
      // Enumerate (shape, color) cells; each contributes max_y P(y, shape, color).
      double acc = 0.0;
      for (int s = 0; s < 2; ++s) {
        for (int c = 0; c < 2; ++c) {
          double best = 0.0;
          for (int y = 0; y < 2; ++y) {
            const double py_s = (y == s) ? rho : 1.0 - rho;
            const double pc_y = (c == y) ? p : 1.0 - p;
            best = std::max(best, 0.5 * py_s * pc_y);
          }
          acc += best;
        }
      }
      return acc;
    }
  }
  throw InvalidArgument("unsupported oracle policy");
}

double bayes_oracle(const CovariateShiftSpec& spec, OraclePolicy policy, int env) {
  spec.validate();
  const auto* rot = std::get_if<RotationModel>(&spec.transform.kind());
  if (rot == nullptr) {
    throw InvalidArgument("covariate oracle supports rotation transforms only");
  }
  const EnvironmentCode& e = spec.code(env);
  const std::size_t d = spec.dim();
  std::vector<std::size_t> coords;
  for (std::size_t i = 0; i < d; ++i) {
    const bool in_plane = i == rot->first || i == rot->second;
    if (policy == OraclePolicy::Joint || (policy == OraclePolicy::ShapeOnly && !in_plane) ||
        (policy == OraclePolicy::ColorOnly && in_plane)) {
      coords.push_back(i);
    }
  }
  if (coords.empty() || coords.size() > 3) {
    throw InvalidArgument("covariate oracle integrates one to three coordinates");
  }

  struct Component {
    std::size_t cls;
    double weight;
    Vector mean;
  };
  std::vector<Component> comps;
  for (std::size_t k = 0; k < spec.class_means.size(); ++k) {
    const auto& ms = spec.class_means[k];
    for (const auto& m : ms) {
      comps.push_back({k, spec.class_prior[k] / static_cast<double>(ms.size()),
                       apply(spec.transform, m, e)});
    }
  }

  const std::size_t dims = coords.size();
  const std::size_t cells = dims == 1 ? 4000 : dims == 2 ? 600 : 200;
  const double pad = 7.0 * spec.sigma;
  std::vector<double> lo(dims), step(dims);
  for (std::size_t j = 0; j < dims; ++j) {
    double mn = comps.front().mean[coords[j]];
    double mx = mn;
    for (const auto& c : comps) {
      mn = std::min(mn, c.mean[coords[j]]);
      mx = std::max(mx, c.mean[coords[j]]);
    }
    lo[j] = mn - pad;
    step[j] = (mx - mn + 2.0 * pad) / static_cast<double>(cells);
  }
  // dens[c][j][i]: 1-d normal density of component c along axis j at cell i.
  const double norm = 1.0 / (spec.sigma * std::sqrt(2.0 * std::numbers::pi));
  std::vector<std::vector<std::vector<double>>> dens(comps.size());
  for (std::size_t c = 0; c < comps.size(); ++c) {
    dens[c].resize(dims);
    for (std::size_t j = 0; j < dims; ++j) {
      dens[c][j].resize(cells);
      for (std::size_t i = 0; i < cells; ++i) {
        const double x = lo[j] + (static_cast<double>(i) + 0.5) * step[j];
        const double z = (x - comps[c].mean[coords[j]]) / spec.sigma;
        dens[c][j][i] = norm * std::exp(-0.5 * z * z) * step[j];
      }
    }
  }
  const std::size_t classes = spec.class_means.size();
  std::vector<double> mass(classes);
  double acc = 0.0;
  const std::size_t n1 = dims > 1 ? cells : 1;
  const std::size_t n2 = dims > 2 ? cells : 1;
  for (std::size_t a = 0; a < cells; ++a) {
    for (std::size_t b = 0; b < n1; ++b) {
      for (std::size_t c3 = 0; c3 < n2; ++c3) {
        std::fill(mass.begin(), mass.end(), 0.0);
        for (std::size_t c = 0; c < comps.size(); ++c) {
          double m = comps[c].weight * dens[c][0][a];
          if (dims > 1) m *= dens[c][1][b];
          if (dims > 2) m *= dens[c][2][c3];
          mass[comps[c].cls] += m;
        }
        acc += *std::max_element(mass.begin(), mass.end());
      }
    }
  }
  return acc;
}

void write_dataset(std::ostream& out, const std::vector<EnvironmentDataset>& data) {
  std::size_t count = 0;
  std::size_t dim = 0;
  for (const auto& ds : data) {
    count += ds.size();
    if (!ds.empty()) dim = ds.examples.front().x.size();
  }
  out << count << ' ' << dim << '\n';
  for (const auto& ds : data) {
    for (const auto& ex : ds.examples) {
      if (ex.x.size() != dim) throw DimensionError("dataset records differ in dimension");
      for (double v : ex.x) {
        write_number(out, v);
        out << ' ';
      }
      out << ex.y << ' ' << ex.env << '\n';
    }
  }
}

std::vector<EnvironmentDataset> read_dataset(std::istream& in) {
  std::size_t count = 0;
  std::size_t dim = 0;
  if (!(in >> count >> dim)) throw InvalidArgument("dataset header must be 'count dim'");
  std::map<int, EnvironmentDataset> by_env;
  for (std::size_t r = 0; r < count; ++r) {
    LabeledExample ex;
    ex.x.resize(dim);
    std::string token;
    for (std::size_t j = 0; j < dim; ++j) {
      if (!(in >> token)) throw InvalidArgument("dataset truncated");
      const auto res = std::from_chars(token.data(), token.data() + token.size(), ex.x[j]);
      if (res.ec != std::errc()) throw InvalidArgument("bad feature value '" + token + "'");
    }
    if (!(in >> ex.y >> ex.env)) throw InvalidArgument("dataset record lacks label or env");
    auto& ds = by_env[ex.env];
    ds.env = ex.env;
    ds.examples.push_back(std::move(ex));
  }
  std::vector<EnvironmentDataset> out;
  for (auto& [env, ds] : by_env) out.push_back(std::move(ds));
  return out;
}

}  // namespace mbdg
