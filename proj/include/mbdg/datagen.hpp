#pragma once

// Synthetic multi-domain data.
//
// Covariate shift: a base pair (X, Y) is drawn once and every environment e
// observes (G(X, e), Y). Concept shift: a two-bit analog of ColoredMNIST where
// a shape block agrees with the label with probability shape_accuracy and a
// color bit agrees with probability color_agreement[e].

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "mbdg/data.hpp"
#include "mbdg/transforms.hpp"

namespace mbdg {

struct CovariateShiftSpec {
  /// class_means[k] lists the equally weighted Gaussian components of class k.
  std::vector<std::vector<Vector>> class_means;
  double sigma = 0.5;
  std::vector<double> class_prior;
  DomainTransformationModel transform{RotationModel{}};
  std::vector<EnvironmentCode> train_codes;
  std::vector<EnvironmentCode> test_codes;

  std::size_t dim() const;
  std::size_t num_envs() const { return train_codes.size() + test_codes.size(); }
  /// Code of env id `env`: train codes first, then test codes.
  const EnvironmentCode& code(int env) const;
  void validate() const;
};

struct ConceptShiftSpec {
  double shape_accuracy = 0.75;
  std::vector<double> color_agreement{0.9, 0.8, 0.1};
  std::size_t n_per_env = 20000;
  /// Shape clusters sit at -/+ shape_offset on both shape coordinates.
  double shape_offset = 1.0;
  double shape_sigma = 0.25;
  double noise_sigma = 1.0;
  double color_scale = 1.0;

  static constexpr std::size_t kDim = 5;
  static constexpr std::size_t kRedCoord = 3;
  static constexpr std::size_t kGreenCoord = 4;

  std::size_t num_envs() const { return color_agreement.size(); }
  void validate() const;
};

/// Rotation task: features (plane0, plane1, invariant). Class 0 clusters at
/// angles 0 and pi in the plane, class 1 at pi/2 and 3pi/2, so a quarter turn
/// swaps the classes; the invariant coordinate carries a weaker signal.
/// G rotates the plane by angles uniform in [0, 2pi).
CovariateShiftSpec rotation_task_spec(std::vector<EnvironmentCode> train_codes,
                                      std::vector<EnvironmentCode> test_codes);

/// The flip-color transformation matching ConceptShiftSpec's layout.
DomainTransformationModel concept_shift_transform(const ConceptShiftSpec& spec);

/// Untransformed draws from the base pair (X, Y).
std::vector<LabeledExample> sample_base(const CovariateShiftSpec& spec, std::size_t n,
                                        std::uint64_t seed);

/// One dataset per environment (train codes then test codes), all built from
/// a single base draw so labels agree example by example.
std::vector<EnvironmentDataset> gen_covariate_shift(const CovariateShiftSpec& spec,
                                                    std::size_t n, std::uint64_t seed);

/// One dataset per color_agreement entry; env i uses seed + i.
std::vector<EnvironmentDataset> gen_concept_shift(const ConceptShiftSpec& spec,
                                                  std::uint64_t seed);

/// Single concept-shift environment with its own sample count.
EnvironmentDataset gen_concept_shift_env(const ConceptShiftSpec& spec, int env, std::size_t n,
                                         std::uint64_t seed);

enum class OraclePolicy { ShapeOnly, ColorOnly, Joint };

/// Exact expected accuracy of the Bayes classifier restricted to the policy's
/// features. ShapeOnly predicts the shape class, ColorOnly predicts the color.
double bayes_oracle(const ConceptShiftSpec& spec, OraclePolicy policy, int env);

/// Bayes accuracy by midpoint quadrature over the mixture. ShapeOnly uses the
/// coordinates the rotation leaves fixed, ColorOnly the rotated plane, Joint
/// everything. Supports rotation transforms and at most three coordinates.
double bayes_oracle(const CovariateShiftSpec& spec, OraclePolicy policy, int env);

/// Header `count dim`, then one record per line: features, label, env id.
void write_dataset(std::ostream& out, const std::vector<EnvironmentDataset>& data);
std::vector<EnvironmentDataset> read_dataset(std::istream& in);

}  // namespace mbdg
