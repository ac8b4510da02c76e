#pragma once

// Dense row-major matrices and a small reverse-mode differentiation tape.
//
// A Tape is a recorded program over matrix-valued nodes. Parameter nodes are
// views into a flat parameter vector supplied at evaluation time, so one
// recorded tape can be replayed for any theta with the matching layout.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mbdg/errors.hpp"

namespace mbdg {

using Vector = std::vector<double>;

/// Throws NonFiniteError naming `what` if any entry is NaN or Inf.
void require_finite(std::span<const double> values, const char* what);

/// Deterministic pairwise (tree) summation.
double pairwise_sum(std::span<const double> values);

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix row(std::span<const double> values);
  static Matrix scalar(double v) { return Matrix(1, 1, v); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<const double> row_view(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }

  bool same_shape(const Matrix& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// One named block of a flat parameter vector, read as a rows x cols matrix.
struct ParameterSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
};

/// Slices covering a flat parameter vector exactly once, in order.
class ParameterLayout {
 public:
  ParameterLayout() = default;

  /// Appends a block after the last one and returns its slice.
  const ParameterSlice& append(std::string name, std::size_t rows, std::size_t cols);

  std::size_t total_size() const noexcept { return total_; }
  const std::vector<ParameterSlice>& slices() const noexcept { return slices_; }
  const ParameterSlice& slice(std::size_t i) const { return slices_.at(i); }

  bool operator==(const ParameterLayout& o) const;

 private:
  std::vector<ParameterSlice> slices_;
  std::size_t total_ = 0;
};

class ParameterVector {
 public:
  ParameterVector() = default;
  /// Zero-initialised parameters for `layout`.
  explicit ParameterVector(ParameterLayout layout);
  ParameterVector(ParameterLayout layout, std::vector<double> values);

  /// A layout with a single block of `n` scalars.
  static ParameterVector flat(std::vector<double> values);

  const ParameterLayout& layout() const noexcept { return layout_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  /// Copy of block `i` as a matrix.
  Matrix block(std::size_t i) const;

 private:
  ParameterLayout layout_;
  std::vector<double> values_;
};

/// Handle to a node recorded on a Tape.
struct NodeId {
  std::size_t index = 0;
};

struct Evaluation {
  double value = 0.0;
  std::vector<double> gradient;
  /// Values of the tape's probe nodes, in registration order.
  std::vector<double> probes;
};

class Tape {
 public:
  /// A tape over parameter vectors of exactly `parameter_count` scalars.
  explicit Tape(std::size_t parameter_count) : parameter_count_(parameter_count) {}

  std::size_t parameter_count() const noexcept { return parameter_count_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t rows(NodeId id) const { return node(id).rows; }
  std::size_t cols(NodeId id) const { return node(id).cols; }

  NodeId constant(Matrix value);
  NodeId parameter(const ParameterSlice& slice);
  NodeId parameter(std::size_t offset, std::size_t rows, std::size_t cols);

  // Elementwise ops accept identical shapes, or a right operand that is
  // 1x1, 1xcols (row broadcast) or rowsx1 (column broadcast).
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId maximum(NodeId a, NodeId b);
  NodeId add_scalar(NodeId a, double c);
  NodeId scale(NodeId a, double c);
  /// min(a, ceiling) elementwise.
  NodeId clamp_max(NodeId a, double ceiling);
  /// max(a, floor) elementwise.
  NodeId clamp_min(NodeId a, double floor);

  /// a * b, or a * b^T when `transpose_b`.
  NodeId matmul(NodeId a, NodeId b, bool transpose_b = false);

  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId tanh(NodeId a);
  NodeId relu(NodeId a);

  /// Per-row maximum (rows x 1); ties route the gradient to the lowest column.
  NodeId row_max(NodeId a);
  /// Per-row sum (rows x 1).
  NodeId row_sum(NodeId a);
  /// Sum of all entries (1 x 1).
  NodeId sum(NodeId a);
  /// Mean of all entries (1 x 1).
  NodeId mean(NodeId a);

  // Composites built from the primitives above.
  NodeId log_softmax(NodeId logits);
  NodeId softmax(NodeId logits);

  /// Marks the scalar (1x1) objective node.
  void set_output(NodeId node);
  NodeId output() const;

  /// Registers a 1x1 node whose value value_and_gradient() reports.
  void add_probe(NodeId node);

  /// Forward pass; returns every node value.
  std::vector<Matrix> forward(std::span<const double> theta) const;

 private:
  enum class Op {
    Constant, Parameter, Add, Sub, Mul, Maximum, AddScalar, Scale, ClampMax,
    ClampMin, MatMul, MatMulT, Exp, Log, Tanh, Relu, RowMax, RowSum, Sum, Mean
  };
  struct Node {
    Op op;
    std::size_t a = 0;
    std::size_t b = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    double scalar = 0.0;
    std::size_t offset = 0;
    std::size_t constant = 0;
  };

  NodeId push(Node n);
  NodeId elementwise(Op op, NodeId a, NodeId b);
  NodeId unary(Op op, NodeId a, double scalar = 0.0);
  const Node& node(NodeId id) const;

  friend Evaluation value_and_gradient(const Tape&, std::span<const double>);

  std::size_t parameter_count_;
  std::vector<Node> nodes_;
  std::vector<Matrix> constants_;
  std::vector<std::size_t> probes_;
  std::size_t output_ = static_cast<std::size_t>(-1);
};

/// Value of the tape's output node at theta.
double evaluate(const Tape& tape, const ParameterVector& theta);
double evaluate(const Tape& tape, std::span<const double> theta);

/// Exact reverse-mode gradient of the output node at theta.
ParameterVector gradient(const Tape& tape, const ParameterVector& theta);

/// Output value and its gradient from one forward/backward sweep.
Evaluation value_and_gradient(const Tape& tape, std::span<const double> theta);

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central-difference gradient (f(theta + h e_i) - f(theta - h e_i)) / 2h.
std::vector<double> finite_diff_gradient(const ScalarFunction& f,
                                         std::span<const double> theta, double h);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor).
double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-6);

}  // namespace mbdg
