#pragma once

// Distances between predictive distributions and the G-invariance
// constraint functional built on them.

#include <span>
#include <vector>

#include "mbdg/data.hpp"
#include "mbdg/predictors.hpp"
#include "mbdg/transforms.hpp"

namespace mbdg {

enum class MetricKind { KL, TotalVariation };

/// KL(p || q) with additive smoothing inside both logs, clamped to
/// [0, bound]; or total variation 0.5 * sum |p - q|.
struct DistanceMetric {
  MetricKind kind = MetricKind::KL;
  double smoothing = 1e-8;
  double bound = 20.0;
  /// When set, dist_reg measures d(second, first) instead of d(first, second).
  bool reversed = false;
};

double distance(const DistanceMetric& m, std::span<const double> p, std::span<const double> q);

/// A clean instance and its transformed partner.
struct InputPair {
  Vector first;
  Vector second;
};

/// (1/m) sum_j d(phi(first_j), phi(second_j)).
double dist_reg(const Predictor& p, std::span<const InputPair> batch, const DistanceMetric& m);

/// Per-row distance between the softmax of two logit batches (rows x 1).
NodeId distance_rows_node(Tape& tape, NodeId logits_first, NodeId logits_second,
                          const DistanceMetric& m);

/// dist_reg recorded on a fresh tape; output is the mean pair distance.
Tape dist_reg_tape(const Predictor& p, std::span<const InputPair> batch, const DistanceMetric& m);

/// Constraint value for a fixed code: (1/N) sum_j d(phi(x_j), phi(G(x_j, e))).
double constraint_value(const Predictor& p, std::span<const Vector> sample,
                        const DomainTransformationModel& g, std::span<const double> e,
                        const DistanceMetric& m);
double constraint_value(const Predictor& p, const EnvironmentDataset& data,
                        const DomainTransformationModel& g, std::span<const double> e,
                        const DistanceMetric& m);

}  // namespace mbdg
