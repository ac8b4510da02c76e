#include "mbdg/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mbdg {

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NonFiniteError(std::string("non-finite value in ") + what);
    }
  }
}

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("matrix data size does not match shape");
  }
}

Matrix Matrix::row(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

const ParameterSlice& ParameterLayout::append(std::string name, std::size_t rows,
                                              std::size_t cols) {
  slices_.push_back(ParameterSlice{std::move(name), total_, rows, cols});
  total_ += rows * cols;
  return slices_.back();
}

bool ParameterLayout::operator==(const ParameterLayout& o) const {
  if (total_ != o.total_ || slices_.size() != o.slices_.size()) return false;
  for (std::size_t i = 0; i < slices_.size(); ++i) {
    const auto& a = slices_[i];
    const auto& b = o.slices_[i];
    if (a.offset != b.offset || a.rows != b.rows || a.cols != b.cols) return false;
  }
  return true;
}

ParameterVector::ParameterVector(ParameterLayout layout)
    : layout_(std::move(layout)), values_(layout_.total_size(), 0.0) {}

ParameterVector::ParameterVector(ParameterLayout layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (values_.size() != layout_.total_size()) {
    throw DimensionError("parameter values do not cover the layout");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw NonFiniteError("non-finite parameter value");
  }
}

ParameterVector ParameterVector::flat(std::vector<double> values) {
  ParameterLayout layout;
  layout.append("theta", 1, values.size());
  return ParameterVector(std::move(layout), std::move(values));
}

Matrix ParameterVector::block(std::size_t i) const {
  const auto& s = layout_.slice(i);
  return Matrix(s.rows, s.cols,
                std::vector<double>(values_.begin() + static_cast<std::ptrdiff_t>(s.offset),
                                    values_.begin() +
                                        static_cast<std::ptrdiff_t>(s.offset + s.size())));
}

namespace {

// Maps (r, c) of the left operand's shape into the right operand's storage.
struct Broadcast {
  std::size_t rows;
  std::size_t cols;

  std::size_t index(std::size_t r, std::size_t c) const {
    return (rows == 1 ? 0 : r) * cols + (cols == 1 ? 0 : c);
  }
};

bool broadcastable(std::size_t ar, std::size_t ac, std::size_t br, std::size_t bc) {
  return (br == ar || br == 1) && (bc == ac || bc == 1);
}

}  // namespace

NodeId Tape::push(Node n) {
  nodes_.push_back(n);
  return NodeId{nodes_.size() - 1};
}

const Tape::Node& Tape::node(NodeId id) const {
  if (id.index >= nodes_.size()) throw InvalidArgument("node id not on this tape");
  return nodes_[id.index];
}

NodeId Tape::constant(Matrix value) {
  Node n{Op::Constant};
  n.rows = value.rows();
  n.cols = value.cols();
  require_finite(value.data(), "tape constant");
  n.constant = constants_.size();
  constants_.push_back(std::move(value));
  return push(n);
}

NodeId Tape::parameter(const ParameterSlice& slice) {
  return parameter(slice.offset, slice.rows, slice.cols);
}

NodeId Tape::parameter(std::size_t offset, std::size_t rows, std::size_t cols) {
  if (offset + rows * cols > parameter_count_) {
    throw DimensionError("parameter slice exceeds tape parameter count");
  }
  Node n{Op::Parameter};
  n.offset = offset;
  n.rows = rows;
  n.cols = cols;
  return push(n);
}

NodeId Tape::elementwise(Op op, NodeId a, NodeId b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (!broadcastable(na.rows, na.cols, nb.rows, nb.cols)) {
    std::ostringstream msg;
    msg << "elementwise shape mismatch " << na.rows << "x" << na.cols << " vs " << nb.rows
        << "x" << nb.cols;
    throw DimensionError(msg.str());
  }
  Node n{op};
  n.a = a.index;
  n.b = b.index;
  n.rows = na.rows;
  n.cols = na.cols;
  return push(n);
}

NodeId Tape::unary(Op op, NodeId a, double scalar) {
  const Node& na = node(a);
  Node n{op};
  n.a = a.index;
  n.scalar = scalar;
  switch (op) {
    case Op::RowMax:
    case Op::RowSum:
      n.rows = na.rows;
      n.cols = 1;
      break;
    case Op::Sum:
    case Op::Mean:
      n.rows = 1;
      n.cols = 1;
      break;
    default:
      n.rows = na.rows;
      n.cols = na.cols;
  }
  return push(n);
}

NodeId Tape::add(NodeId a, NodeId b) { return elementwise(Op::Add, a, b); }
NodeId Tape::sub(NodeId a, NodeId b) { return elementwise(Op::Sub, a, b); }
NodeId Tape::mul(NodeId a, NodeId b) { return elementwise(Op::Mul, a, b); }
NodeId Tape::maximum(NodeId a, NodeId b) { return elementwise(Op::Maximum, a, b); }
NodeId Tape::add_scalar(NodeId a, double c) { return unary(Op::AddScalar, a, c); }
NodeId Tape::scale(NodeId a, double c) { return unary(Op::Scale, a, c); }
NodeId Tape::clamp_max(NodeId a, double ceiling) { return unary(Op::ClampMax, a, ceiling); }
NodeId Tape::clamp_min(NodeId a, double floor) { return unary(Op::ClampMin, a, floor); }
NodeId Tape::exp(NodeId a) { return unary(Op::Exp, a); }
NodeId Tape::log(NodeId a) { return unary(Op::Log, a); }
NodeId Tape::tanh(NodeId a) { return unary(Op::Tanh, a); }
NodeId Tape::relu(NodeId a) { return unary(Op::Relu, a); }
NodeId Tape::row_max(NodeId a) { return unary(Op::RowMax, a); }
NodeId Tape::row_sum(NodeId a) { return unary(Op::RowSum, a); }
NodeId Tape::sum(NodeId a) { return unary(Op::Sum, a); }
NodeId Tape::mean(NodeId a) { return unary(Op::Mean, a); }

NodeId Tape::matmul(NodeId a, NodeId b, bool transpose_b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  const std::size_t inner = transpose_b ? nb.cols : nb.rows;
  if (na.cols != inner) {
    std::ostringstream msg;
    msg << "matmul inner dimension mismatch " << na.cols << " vs " << inner;
    throw DimensionError(msg.str());
  }
  Node n{transpose_b ? Op::MatMulT : Op::MatMul};
  n.a = a.index;
  n.b = b.index;
  n.rows = na.rows;
  n.cols = transpose_b ? nb.rows : nb.cols;
  return push(n);
}

NodeId Tape::log_softmax(NodeId logits) {
  const NodeId shifted = sub(logits, row_max(logits));
  return sub(shifted, log(row_sum(exp(shifted))));
}

NodeId Tape::softmax(NodeId logits) { return exp(log_softmax(logits)); }

void Tape::set_output(NodeId id) {
  const Node& n = node(id);
  if (n.rows != 1 || n.cols != 1) throw DimensionError("tape output must be 1x1");
  output_ = id.index;
}

void Tape::add_probe(NodeId id) {
  const Node& n = node(id);
  if (n.rows != 1 || n.cols != 1) throw DimensionError("tape probes must be 1x1");
  probes_.push_back(id.index);
}

NodeId Tape::output() const {
  if (output_ >= nodes_.size()) throw InvalidArgument("tape has no output node");
  return NodeId{output_};
}

std::vector<Matrix> Tape::forward(std::span<const double> theta) const {
  if (theta.size() != parameter_count_) {
    std::ostringstream msg;
    msg << "theta has " << theta.size() << " entries, tape expects " << parameter_count_;
    throw DimensionError(msg.str());
  }
  std::vector<Matrix> v;
  v.reserve(nodes_.size());
  for (const Node& n : nodes_) {
    Matrix out(n.rows, n.cols);
    const char* name = "tape";
    switch (n.op) {
      case Op::Constant:
        out = constants_[n.constant];
        name = "constant";
        break;
      case Op::Parameter:
        std::copy_n(theta.begin() + static_cast<std::ptrdiff_t>(n.offset), out.size(),
                    out.data().begin());
        name = "parameter";
        break;
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Maximum: {
        const Matrix& a = v[n.a];
        const Matrix& b = v[n.b];
        const Broadcast bc{b.rows(), b.cols()};
        for (std::size_t r = 0; r < n.rows; ++r) {
          for (std::size_t c = 0; c < n.cols; ++c) {
            const double x = a(r, c);
            const double y = b.data()[bc.index(r, c)];
            double z = 0.0;
            switch (n.op) {
              case Op::Add: z = x + y; break;
              case Op::Sub: z = x - y; break;
              case Op::Mul: z = x * y; break;
              default: z = x >= y ? x : y;
            }
            out(r, c) = z;
          }
        }
        name = "elementwise op";
        break;
      }
      case Op::AddScalar:
      case Op::Scale:
      case Op::ClampMax:
      case Op::ClampMin:
      case Op::Exp:
      case Op::Log:
      case Op::Tanh:
      case Op::Relu: {
        const auto a = v[n.a].data();
        auto o = out.data();
        for (std::size_t i = 0; i < o.size(); ++i) {
          const double x = a[i];
          switch (n.op) {
            case Op::AddScalar: o[i] = x + n.scalar; break;
            case Op::Scale: o[i] = x * n.scalar; break;
            case Op::ClampMax: o[i] = std::min(x, n.scalar); break;
            case Op::ClampMin: o[i] = std::max(x, n.scalar); break;
            case Op::Exp: o[i] = std::exp(x); break;
            case Op::Log: o[i] = std::log(x); break;
            case Op::Tanh: o[i] = std::tanh(x); break;
            default: o[i] = x > 0.0 ? x : 0.0;
          }
        }
        name = n.op == Op::Exp ? "exp" : n.op == Op::Log ? "log" : "unary op";
        break;
      }
      case Op::MatMul: {
        const Matrix& a = v[n.a];
        const Matrix& b = v[n.b];
        for (std::size_t r = 0; r < a.rows(); ++r) {
          for (std::size_t k = 0; k < a.cols(); ++k) {
            const double x = a(r, k);
            for (std::size_t c = 0; c < b.cols(); ++c) out(r, c) += x * b(k, c);
          }
        }
        name = "matmul";
        break;
      }
      case Op::MatMulT: {
        const Matrix& a = v[n.a];
        const Matrix& b = v[n.b];
        for (std::size_t r = 0; r < a.rows(); ++r) {
          const auto ar = a.row_view(r);
          for (std::size_t c = 0; c < b.rows(); ++c) {
            const auto br = b.row_view(c);
            double s = 0.0;
            for (std::size_t k = 0; k < ar.size(); ++k) s += ar[k] * br[k];
            out(r, c) = s;
          }
        }
        name = "matmul";
        break;
      }
      case Op::RowMax:
      case Op::RowSum: {
        const Matrix& a = v[n.a];
        for (std::size_t r = 0; r < a.rows(); ++r) {
          const auto ar = a.row_view(r);
          if (n.op == Op::RowMax) {
            out(r, 0) = *std::max_element(ar.begin(), ar.end());
          } else {
            double s = 0.0;
            for (double x : ar) s += x;
            out(r, 0) = s;
          }
        }
        name = "row reduction";
        break;
      }
      case Op::Sum:
      case Op::Mean: {
        const auto a = v[n.a].data();
        const double s = pairwise_sum(a);
        out(0, 0) = n.op == Op::Sum ? s : s / static_cast<double>(a.size());
        name = "reduction";
        break;
      }
    }
    require_finite(out.data(), name);
    v.push_back(std::move(out));
  }
  return v;
}

Evaluation value_and_gradient(const Tape& tape, std::span<const double> theta) {
  using Op = Tape::Op;
  const std::size_t out_index = tape.output().index;
  const std::vector<Matrix> v = tape.forward(theta);

  std::vector<Matrix> g;
  g.reserve(tape.nodes_.size());
  for (const auto& n : tape.nodes_) g.emplace_back(n.rows, n.cols);
  g[out_index](0, 0) = 1.0;

  Evaluation result;
  result.value = v[out_index](0, 0);
  result.gradient.assign(tape.parameter_count_, 0.0);
  for (std::size_t p : tape.probes_) result.probes.push_back(v[p](0, 0));

  for (std::size_t i = out_index + 1; i-- > 0;) {
    const Tape::Node& n = tape.nodes_[i];
    const Matrix& gi = g[i];
    switch (n.op) {
      case Op::Constant:
        break;
      case Op::Parameter: {
        const auto gd = gi.data();
        for (std::size_t k = 0; k < gd.size(); ++k) result.gradient[n.offset + k] += gd[k];
        break;
      }
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Maximum: {
        const Matrix& a = v[n.a];
        const Matrix& b = v[n.b];
        Matrix& ga = g[n.a];
        auto gb = g[n.b].data();
        const Broadcast bc{b.rows(), b.cols()};
        for (std::size_t r = 0; r < n.rows; ++r) {
          for (std::size_t c = 0; c < n.cols; ++c) {
            const double up = gi(r, c);
            const std::size_t j = bc.index(r, c);
            switch (n.op) {
              case Op::Add:
                ga(r, c) += up;
                gb[j] += up;
                break;
              case Op::Sub:
                ga(r, c) += up;
                gb[j] -= up;
                break;
              case Op::Mul:
                ga(r, c) += up * b.data()[j];
                gb[j] += up * a(r, c);
                break;
              default:
                if (a(r, c) >= b.data()[j]) {
                  ga(r, c) += up;
                } else {
                  gb[j] += up;
                }
            }
          }
        }
        break;
      }
      case Op::AddScalar:
      case Op::Scale:
      case Op::ClampMax:
      case Op::ClampMin:
      case Op::Exp:
      case Op::Log:
      case Op::Tanh:
      case Op::Relu: {
        const auto a = v[n.a].data();
        const auto o = v[i].data();
        const auto up = gi.data();
        auto ga = g[n.a].data();
        for (std::size_t k = 0; k < up.size(); ++k) {
          double d = 0.0;
          switch (n.op) {
            case Op::AddScalar: d = 1.0; break;
            case Op::Scale: d = n.scalar; break;
            case Op::ClampMax: d = a[k] < n.scalar ? 1.0 : 0.0; break;
            case Op::ClampMin: d = a[k] > n.scalar ? 1.0 : 0.0; break;
            case Op::Exp: d = o[k]; break;
            case Op::Log: d = 1.0 / a[k]; break;
            case Op::Tanh: d = 1.0 - o[k] * o[k]; break;
            default: d = a[k] > 0.0 ? 1.0 : 0.0;
          }
          ga[k] += up[k] * d;
        }
        break;
      }
      case Op::MatMul: {
        const Matrix& a = v[n.a];
        const Matrix& b = v[n.b];
        Matrix& ga = g[n.a];
        Matrix& gb = g[n.b];
        for (std::size_t r = 0; r < a.rows(); ++r) {
          for (std::size_t k = 0; k < a.cols(); ++k) {
            double s = 0.0;
            for (std::size_t c = 0; c < b.cols(); ++c) {
              s += gi(r, c) * b(k, c);
              gb(k, c) += a(r, k) * gi(r, c);
            }
            ga(r, k) += s;
          }
        }
        break;
      }
      case Op::MatMulT: {
        const Matrix& a = v[n.a];
        const Matrix& b = v[n.b];
        Matrix& ga = g[n.a];
        Matrix& gb = g[n.b];
        for (std::size_t r = 0; r < a.rows(); ++r) {
          for (std::size_t c = 0; c < b.rows(); ++c) {
            const double up = gi(r, c);
            if (up == 0.0) continue;
            for (std::size_t k = 0; k < a.cols(); ++k) {
              ga(r, k) += up * b(c, k);
              gb(c, k) += up * a(r, k);
            }
          }
        }
        break;
      }
      case Op::RowMax: {
        const Matrix& a = v[n.a];
        Matrix& ga = g[n.a];
        for (std::size_t r = 0; r < a.rows(); ++r) {
          const auto ar = a.row_view(r);
          const auto arg = static_cast<std::size_t>(
              std::max_element(ar.begin(), ar.end()) - ar.begin());
          ga(r, arg) += gi(r, 0);
        }
        break;
      }
      case Op::RowSum: {
        Matrix& ga = g[n.a];
        for (std::size_t r = 0; r < ga.rows(); ++r) {
          for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += gi(r, 0);
        }
        break;
      }
      case Op::Sum:
      case Op::Mean: {
        auto ga = g[n.a].data();
        const double up =
            n.op == Op::Sum ? gi(0, 0) : gi(0, 0) / static_cast<double>(ga.size());
        for (double& x : ga) x += up;
        break;
      }
    }
  }
  require_finite(result.gradient, "gradient");
  return result;
}

double evaluate(const Tape& tape, std::span<const double> theta) {
  const std::size_t out = tape.output().index;
  return tape.forward(theta)[out](0, 0);
}

double evaluate(const Tape& tape, const ParameterVector& theta) {
  return evaluate(tape, theta.values());
}

ParameterVector gradient(const Tape& tape, const ParameterVector& theta) {
  Evaluation e = value_and_gradient(tape, theta.values());
  return ParameterVector(theta.layout(), std::move(e.gradient));
}

std::vector<double> finite_diff_gradient(const ScalarFunction& f,
                                         std::span<const double> theta, double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite difference step must be positive");
  std::vector<double> point(theta.begin(), theta.end());
  std::vector<double> grad(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + h;
    const double up = f(point);
    point[i] = saved - h;
    const double down = f(point);
    point[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NonFiniteError("finite difference evaluation returned non-finite value");
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor) {
  if (a.size() != b.size()) throw DimensionError("relative error operands differ in size");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace mbdg
