#pragma once

// Feed-forward classifiers producing distributions over labels, with the
// cross-entropy loss and empirical risk built on them.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mbdg/data.hpp"
#include "mbdg/diffcore.hpp"

namespace mbdg {

enum class Activation { Tanh, Relu };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

/// Layer widths from input to output; hidden layers use `activation`, the
/// last layer feeds a softmax.
struct Architecture {
  std::vector<std::size_t> layer_sizes;
  Activation activation = Activation::Tanh;

  /// input -> 16 tanh -> classes.
  static Architecture standard(std::size_t input_dim, std::size_t num_classes);
};

/// Cross-entropy clamped to [0, bound].
struct LossSpec {
  double bound = 20.0;
};

class Predictor {
 public:
  Predictor(Architecture arch, ParameterVector theta);

  /// Weights and biases drawn uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static Predictor initialize(const Architecture& arch, std::uint64_t seed);
  /// All parameters zero: predicts the uniform distribution everywhere.
  static Predictor zeros(const Architecture& arch);

  /// Per layer: W (out x in) followed by b (1 x out).
  static ParameterLayout layout_for(const Architecture& arch);

  const Architecture& architecture() const noexcept { return arch_; }
  const ParameterVector& parameters() const noexcept { return theta_; }
  std::size_t input_dim() const { return arch_.layer_sizes.front(); }
  std::size_t num_classes() const { return arch_.layer_sizes.back(); }

  Predictor with_parameters(std::vector<double> values) const;

  Vector logits(std::span<const double> x) const;
  Vector predict(std::span<const double> x) const;

  /// Records the logits of a batch (rows of `inputs`) on `tape`, reading
  /// weights from the tape's parameter vector.
  NodeId logits_node(Tape& tape, NodeId inputs) const;

 private:
  Architecture arch_;
  ParameterVector theta_;
};

/// Softmax of a logit vector, stable under constant shifts.
Vector softmax(std::span<const double> logits);

Vector predict(const Predictor& p, std::span<const double> x);

/// min(-log q[y], bound).
double cross_entropy(std::span<const double> q, std::size_t y, const LossSpec& spec);

double empirical_risk(const Predictor& p, const EnvironmentDataset& data,
                      const LossSpec& spec);

/// Fraction of examples whose argmax prediction equals the label.
double accuracy(const Predictor& p, const EnvironmentDataset& data);

/// Mean clamped cross-entropy of a batch of logits against `labels`.
NodeId cross_entropy_node(Tape& tape, NodeId logits, std::span<const std::size_t> labels,
                          const LossSpec& spec);

/// Text form: `layers n0 n1 ...`, `activation name`, then all parameters in
/// shortest round-trip decimal, one per line.
void write_predictor(std::ostream& out, const Predictor& p);
Predictor read_predictor(std::istream& in);

}  // namespace mbdg
