#include "mbdg/predictors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace mbdg {

Matrix stack_rows(std::span<const Vector> inputs) {
  if (inputs.empty()) return Matrix();
  const std::size_t d = inputs.front().size();
  Matrix m(inputs.size(), d);
  for (std::size_t r = 0; r < inputs.size(); ++r) {
    if (inputs[r].size() != d) throw DimensionError("stacked rows differ in dimension");
    std::copy(inputs[r].begin(), inputs[r].end(), m.data().begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return m;
}

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw InvalidArgument("unknown activation '" + name + "'");
}

Architecture Architecture::standard(std::size_t input_dim, std::size_t num_classes) {
  return Architecture{{input_dim, 16, num_classes}, Activation::Tanh};
}

ParameterLayout Predictor::layout_for(const Architecture& arch) {
  if (arch.layer_sizes.size() < 2) {
    throw InvalidArgument("architecture needs at least an input and an output layer");
  }
  ParameterLayout layout;
  for (std::size_t l = 0; l + 1 < arch.layer_sizes.size(); ++l) {
    const std::size_t in = arch.layer_sizes[l];
    const std::size_t out = arch.layer_sizes[l + 1];
    if (in == 0 || out == 0) throw InvalidArgument("layer sizes must be positive");
    layout.append("W" + std::to_string(l), out, in);
    layout.append("b" + std::to_string(l), 1, out);
  }
  return layout;
}

Predictor::Predictor(Architecture arch, ParameterVector theta)
    : arch_(std::move(arch)), theta_(std::move(theta)) {
  if (!(theta_.layout() == layout_for(arch_))) {
    throw DimensionError("parameter layout does not match architecture");
  }
  require_finite(theta_.values(), "predictor parameters");
}

Predictor Predictor::initialize(const Architecture& arch, std::uint64_t seed) {
  ParameterLayout layout = layout_for(arch);
  std::vector<double> values(layout.total_size());
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < layout.slices().size(); ++i) {
    const auto& s = layout.slice(i);
    // W and b of layer l share fan_in = layer_sizes[l].
    const double fan_in = static_cast<double>(arch.layer_sizes[i / 2]);
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    for (std::size_t k = 0; k < s.size(); ++k) values[s.offset + k] = u(rng);
  }
  return Predictor(arch, ParameterVector(std::move(layout), std::move(values)));
}

Predictor Predictor::zeros(const Architecture& arch) {
  return Predictor(arch, ParameterVector(layout_for(arch)));
}

Predictor Predictor::with_parameters(std::vector<double> values) const {
  return Predictor(arch_, ParameterVector(theta_.layout(), std::move(values)));
}

Vector Predictor::logits(std::span<const double> x) const {
  if (x.size() != input_dim()) {
    std::ostringstream msg;
    msg << "input has dimension " << x.size() << ", predictor expects " << input_dim();
    throw DimensionError(msg.str());
  }
  Vector h(x.begin(), x.end());
  const auto theta = theta_.values();
  const std::size_t layers = arch_.layer_sizes.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& w = theta_.layout().slice(2 * l);
    const auto& b = theta_.layout().slice(2 * l + 1);
    Vector next(w.rows);
    for (std::size_t o = 0; o < w.rows; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < w.cols; ++i) s += h[i] * theta[w.offset + o * w.cols + i];
      s += theta[b.offset + o];
      if (l + 1 < layers) {
        s = arch_.activation == Activation::Tanh ? std::tanh(s) : std::max(s, 0.0);
      }
      next[o] = s;
    }
    h = std::move(next);
  }
  require_finite(h, "logits");
  return h;
}

Vector Predictor::predict(std::span<const double> x) const { return softmax(logits(x)); }

NodeId Predictor::logits_node(Tape& tape, NodeId inputs) const {
  if (tape.parameter_count() != theta_.size()) {
    throw DimensionError("tape parameter count does not match predictor");
  }
  NodeId h = inputs;
  const std::size_t layers = arch_.layer_sizes.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const NodeId w = tape.parameter(theta_.layout().slice(2 * l));
    const NodeId b = tape.parameter(theta_.layout().slice(2 * l + 1));
    h = tape.add(tape.matmul(h, w, /*transpose_b=*/true), b);
    if (l + 1 < layers) {
      h = arch_.activation == Activation::Tanh ? tape.tanh(h) : tape.relu(h);
    }
  }
  return h;
}

Vector softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax of empty vector");
  const double m = *std::max_element(logits.begin(), logits.end());
  Vector q(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    q[i] = std::exp(logits[i] - m);
    z += q[i];
  }
  for (double& v : q) v /= z;
  return q;
}

Vector predict(const Predictor& p, std::span<const double> x) { return p.predict(x); }

double cross_entropy(std::span<const double> q, std::size_t y, const LossSpec& spec) {
  if (y >= q.size()) {
    throw InvalidArgument("label " + std::to_string(y) + " outside " +
                          std::to_string(q.size()) + " classes");
  }
  if (q[y] <= 0.0) return spec.bound;
  return std::clamp(-std::log(q[y]), 0.0, spec.bound);
}

double empirical_risk(const Predictor& p, const EnvironmentDataset& data,
                      const LossSpec& spec) {
  if (data.empty()) throw InvalidArgument("empirical risk of an empty dataset");
  std::vector<double> losses;
  losses.reserve(data.size());
  for (const auto& ex : data.examples) losses.push_back(cross_entropy(p.predict(ex.x), ex.y, spec));
  return pairwise_sum(losses) / static_cast<double>(losses.size());
}

double accuracy(const Predictor& p, const EnvironmentDataset& data) {
  if (data.empty()) throw InvalidArgument("accuracy of an empty dataset");
  std::size_t correct = 0;
  for (const auto& ex : data.examples) {
    const Vector z = p.logits(ex.x);
    const auto arg = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    if (arg == ex.y) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

NodeId cross_entropy_node(Tape& tape, NodeId logits, std::span<const std::size_t> labels,
                          const LossSpec& spec) {
  const std::size_t rows = tape.rows(logits);
  const std::size_t classes = tape.cols(logits);
  if (labels.size() != rows) throw DimensionError("label count does not match batch size");
  Matrix onehot(rows, classes);
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= classes) throw InvalidArgument("label outside class range");
    onehot(r, labels[r]) = 1.0;
  }
  const NodeId picked = tape.row_sum(tape.mul(tape.log_softmax(logits), tape.constant(std::move(onehot))));
  return tape.mean(tape.clamp_max(tape.scale(picked, -1.0), spec.bound));
}

void write_predictor(std::ostream& out, const Predictor& p) {
  out << "layers";
  for (std::size_t n : p.architecture().layer_sizes) out << ' ' << n;
  out << "\nactivation " << to_string(p.architecture().activation) << '\n';
  char buf[64];
  for (double v : p.parameters().values()) {
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.write(buf, res.ptr - buf);
    out << '\n';
  }
}

Predictor read_predictor(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("predictor file is empty");
  std::istringstream header(line);
  std::string tag;
  header >> tag;
  if (tag != "layers") throw InvalidArgument("predictor file must start with 'layers'");
  Architecture arch;
  std::size_t n = 0;
  while (header >> n) arch.layer_sizes.push_back(n);
  if (!std::getline(in, line)) throw InvalidArgument("predictor file lacks activation line");
  std::istringstream act(line);
  std::string name;
  act >> tag >> name;
  if (tag != "activation") throw InvalidArgument("expected 'activation' line");
  arch.activation = parse_activation(name);

  ParameterLayout layout = Predictor::layout_for(arch);
  std::vector<double> values;
  values.reserve(layout.total_size());
  std::string token;
  while (in >> token) {
    double v = 0.0;
    const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
    if (res.ec != std::errc() || res.ptr != token.data() + token.size()) {
      throw InvalidArgument("bad parameter value '" + token + "'");
    }
    values.push_back(v);
  }
  if (values.size() != layout.total_size()) {
    throw DimensionError("predictor file has " + std::to_string(values.size()) +
                         " parameters, architecture needs " +
                         std::to_string(layout.total_size()));
  }
  return Predictor(std::move(arch), ParameterVector(std::move(layout), std::move(values)));
}

}  // namespace mbdg
