#include "mbdg/constraints.hpp"

#include <algorithm>
#include <cmath>

namespace mbdg {

double distance(const DistanceMetric& m, std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("distributions differ in dimension");
  if (m.kind == MetricKind::TotalVariation) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
    return 0.5 * s;
  }
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    s += p[i] * (std::log(p[i] + m.smoothing) - std::log(q[i] + m.smoothing));
  }
  return std::clamp(s, 0.0, m.bound);
}

double dist_reg(const Predictor& p, std::span<const InputPair> batch, const DistanceMetric& m) {
  if (batch.empty()) throw InvalidArgument("dist_reg of an empty batch");
  std::vector<double> d;
  d.reserve(batch.size());
  for (const auto& pair : batch) {
    if (pair.first.size() != pair.second.size()) throw DimensionError("paired inputs differ in dimension");
    const Vector a = p.predict(pair.first);
    const Vector b = p.predict(pair.second);
    d.push_back(m.reversed ? distance(m, b, a) : distance(m, a, b));
  }
  return pairwise_sum(d) / static_cast<double>(d.size());
}

NodeId distance_rows_node(Tape& tape, NodeId logits_first, NodeId logits_second,
                          const DistanceMetric& m) {
  if (m.reversed) std::swap(logits_first, logits_second);
  if (m.kind == MetricKind::TotalVariation) {
    const NodeId p = tape.softmax(logits_first);
    const NodeId q = tape.softmax(logits_second);
    const NodeId diff = tape.sub(p, q);
    const NodeId abs = tape.maximum(diff, tape.scale(diff, -1.0));
    return tape.scale(tape.row_sum(abs), 0.5);
  }
  const NodeId p = tape.softmax(logits_first);
  const NodeId q = tape.softmax(logits_second);
  const NodeId log_ratio =
      tape.sub(tape.log(tape.add_scalar(p, m.smoothing)), tape.log(tape.add_scalar(q, m.smoothing)));
  const NodeId kl = tape.row_sum(tape.mul(p, log_ratio));
  return tape.clamp_max(tape.clamp_min(kl, 0.0), m.bound);
}

Tape dist_reg_tape(const Predictor& p, std::span<const InputPair> batch, const DistanceMetric& m) {
  if (batch.empty()) throw InvalidArgument("dist_reg of an empty batch");
  std::vector<Vector> first;
  std::vector<Vector> second;
  for (const auto& pair : batch) {
    if (pair.first.size() != pair.second.size()) throw DimensionError("paired inputs differ in dimension");
    first.push_back(pair.first);
    second.push_back(pair.second);
  }
  Tape tape(p.parameters().size());
  const NodeId a = p.logits_node(tape, tape.constant(stack_rows(first)));
  const NodeId b = p.logits_node(tape, tape.constant(stack_rows(second)));
  tape.set_output(tape.mean(distance_rows_node(tape, a, b, m)));
  return tape;
}

double constraint_value(const Predictor& p, std::span<const Vector> sample,
                        const DomainTransformationModel& g, std::span<const double> e,
                        const DistanceMetric& m) {
  if (sample.empty()) throw InvalidArgument("constraint value of an empty sample");
  std::vector<InputPair> pairs;
  pairs.reserve(sample.size());
  for (const auto& x : sample) pairs.push_back(InputPair{x, apply(g, x, e)});
  return dist_reg(p, pairs, m);
}

double constraint_value(const Predictor& p, const EnvironmentDataset& data,
                        const DomainTransformationModel& g, std::span<const double> e,
                        const DistanceMetric& m) {
  std::vector<Vector> xs;
  xs.reserve(data.size());
  for (const auto& ex : data.examples) xs.push_back(ex.x);
  return constraint_value(p, xs, g, e, m);
}

}  // namespace mbdg
