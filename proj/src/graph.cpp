#include "edm2d/graph.hpp"

#include <stdexcept>
#include <string>

namespace edm2d::grad {

namespace {

void check(bool ok, const char* what) {
  if (!ok) {
    throw std::invalid_argument(std::string("graph: ") + what);
  }
}

}  // namespace

Tape::Tape(std::span<const double> params) : params_(params) {}

NodeId Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Tape::constant(Matrix value) { return push(Node{.op = Op::Constant, .value = std::move(value)}); }

NodeId Tape::input(Matrix value) { return push(Node{.op = Op::Input, .value = std::move(value)}); }

NodeId Tape::parameter(std::size_t offset, Eigen::Index rows, Eigen::Index cols) {
  const auto count = static_cast<std::size_t>(rows * cols);
  check(offset + count <= params_.size(), "parameter leaf outside parameter vector");
  Matrix value = Eigen::Map<const Matrix>(params_.data() + offset, rows, cols);
  const NodeId id = push(Node{.op = Op::Parameter, .offset = offset, .value = std::move(value)});
  parameter_leaves_.push_back(id);
  return id;
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Matrix& x = value(a);
  const Matrix& y = value(b);
  check(x.rows() == y.rows() && x.cols() == y.cols(), "add shape mismatch");
  Matrix out = x + y;
  return push(Node{.op = Op::Add, .lhs = static_cast<int>(a.index), .rhs = static_cast<int>(b.index),
                   .value = std::move(out)});
}

NodeId Tape::sub(NodeId a, NodeId b) { return add(a, scale(b, -1.0)); }

NodeId Tape::mul(NodeId a, NodeId b) {
  const Matrix& x = value(a);
  const Matrix& y = value(b);
  check(x.rows() == y.rows() && x.cols() == y.cols(), "mul shape mismatch");
  Matrix out = x.cwiseProduct(y);
  return push(Node{.op = Op::Mul, .lhs = static_cast<int>(a.index), .rhs = static_cast<int>(b.index),
                   .value = std::move(out)});
}

NodeId Tape::scale(NodeId a, double factor) {
  Matrix out = factor * value(a);
  return push(Node{.op = Op::Scale, .lhs = static_cast<int>(a.index), .factor = factor, .value = std::move(out)});
}

NodeId Tape::matmul(NodeId a, NodeId b, bool transpose_a, bool transpose_b) {
  const Matrix& x = value(a);
  const Matrix& y = value(b);
  const Eigen::Index inner_a = transpose_a ? x.rows() : x.cols();
  const Eigen::Index inner_b = transpose_b ? y.cols() : y.rows();
  check(inner_a == inner_b, "matmul inner dimension mismatch");
  Matrix out(transpose_a ? x.cols() : x.rows(), transpose_b ? y.rows() : y.cols());
  if (!transpose_a && !transpose_b) {
    out.noalias() = x * y;
  } else if (!transpose_a && transpose_b) {
    out.noalias() = x * y.transpose();
  } else if (transpose_a && !transpose_b) {
    out.noalias() = x.transpose() * y;
  } else {
    out.noalias() = x.transpose() * y.transpose();
  }
  return push(Node{.op = Op::MatMul, .lhs = static_cast<int>(a.index), .rhs = static_cast<int>(b.index),
                   .i0 = transpose_a ? 1 : 0, .i1 = transpose_b ? 1 : 0, .value = std::move(out)});
}

NodeId Tape::sin(NodeId a) {
  Matrix out = value(a).array().sin().matrix();
  return push(Node{.op = Op::Sin, .lhs = static_cast<int>(a.index), .value = std::move(out)});
}

NodeId Tape::cos(NodeId a) {
  Matrix out = value(a).array().cos().matrix();
  return push(Node{.op = Op::Cos, .lhs = static_cast<int>(a.index), .value = std::move(out)});
}

NodeId Tape::row_sum(NodeId a) {
  const Matrix& x = value(a);
  Matrix out(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double acc = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      acc += x(r, c);
    }
    out(r, 0) = acc;
  }
  return push(Node{.op = Op::RowSum, .lhs = static_cast<int>(a.index), .value = std::move(out)});
}

NodeId Tape::squared_norm(NodeId a) {
  const Matrix& x = value(a);
  Matrix out(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double acc = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      acc += x(r, c) * x(r, c);
    }
    out(r, 0) = acc;
  }
  return push(Node{.op = Op::SquaredNorm, .lhs = static_cast<int>(a.index), .value = std::move(out)});
}

NodeId Tape::broadcast_cols(NodeId a, Eigen::Index cols) {
  const Matrix& x = value(a);
  check(x.cols() == 1, "broadcast_cols expects a column");
  Matrix out = x.replicate(1, cols);
  return push(Node{.op = Op::BroadcastCols, .lhs = static_cast<int>(a.index), .i0 = cols, .value = std::move(out)});
}

NodeId Tape::broadcast_rows(NodeId a, Eigen::Index rows) {
  const Matrix& x = value(a);
  check(x.rows() == 1, "broadcast_rows expects a row");
  Matrix out = x.replicate(rows, 1);
  return push(Node{.op = Op::BroadcastRows, .lhs = static_cast<int>(a.index), .i0 = rows, .value = std::move(out)});
}

NodeId Tape::sum_rows(NodeId a) {
  const Matrix& x = value(a);
  Matrix out = Matrix::Zero(1, x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    out.row(0) += x.row(r);
  }
  return push(Node{.op = Op::SumRows, .lhs = static_cast<int>(a.index), .value = std::move(out)});
}

NodeId Tape::slice_cols(NodeId a, Eigen::Index begin, Eigen::Index count) {
  const Matrix& x = value(a);
  check(begin >= 0 && count >= 0 && begin + count <= x.cols(), "slice_cols out of range");
  Matrix out = x.middleCols(begin, count);
  return push(Node{.op = Op::SliceCols, .lhs = static_cast<int>(a.index), .i0 = begin, .i1 = count,
                   .value = std::move(out)});
}

NodeId Tape::pad_cols(NodeId a, Eigen::Index begin, Eigen::Index total) {
  const Matrix& x = value(a);
  check(begin >= 0 && begin + x.cols() <= total, "pad_cols out of range");
  Matrix out = Matrix::Zero(x.rows(), total);
  out.middleCols(begin, x.cols()) = x;
  return push(Node{.op = Op::PadCols, .lhs = static_cast<int>(a.index), .i0 = begin, .i1 = total,
                   .value = std::move(out)});
}

NodeId Tape::scale_rows(NodeId a, NodeId weights) {
  return mul(a, broadcast_cols(weights, value(a).cols()));
}

NodeId Tape::accumulate(std::optional<NodeId> acc, NodeId contribution) {
  return acc ? add(*acc, contribution) : contribution;
}

std::vector<NodeId> Tape::gradient(NodeId output, std::span<const NodeId> wrt, std::optional<NodeId> seed) {
  const std::size_t end = output.index + 1;
  check(end <= nodes_.size(), "gradient of unknown node");

  // reach[i]: node i depends on at least one node in `wrt`.
  std::vector<char> reach(end, 0);
  for (const NodeId w : wrt) {
    if (w.index < end) {
      reach[w.index] = 1;
    }
  }
  for (std::size_t i = 0; i < end; ++i) {
    const Node& n = nodes_[i];
    if ((n.lhs >= 0 && reach[static_cast<std::size_t>(n.lhs)]) ||
        (n.rhs >= 0 && reach[static_cast<std::size_t>(n.rhs)])) {
      reach[i] = 1;
    }
  }

  std::vector<std::optional<NodeId>> adj(end);
  if (seed) {
    const Matrix& s = value(*seed);
    check(s.rows() == value(output).rows() && s.cols() == value(output).cols(), "seed shape mismatch");
    adj[output.index] = *seed;
  } else {
    const Matrix& out = value(output);
    adj[output.index] = constant(Matrix::Ones(out.rows(), out.cols()));
  }

  for (std::size_t i = end; i-- > 0;) {
    if (!adj[i] || !reach[i]) {
      continue;
    }
    // Deque storage keeps this reference valid while new nodes are appended.
    const Node& n = nodes_[i];
    const NodeId g = *adj[i];
    const auto lhs = NodeId{static_cast<std::uint32_t>(n.lhs < 0 ? 0 : n.lhs)};
    const auto rhs = NodeId{static_cast<std::uint32_t>(n.rhs < 0 ? 0 : n.rhs)};
    const bool want_lhs = n.lhs >= 0 && reach[lhs.index];
    const bool want_rhs = n.rhs >= 0 && reach[rhs.index];

    switch (n.op) {
      case Op::Constant:
      case Op::Parameter:
      case Op::Input:
        break;
      case Op::Add:
        if (want_lhs) adj[lhs.index] = accumulate(adj[lhs.index], g);
        if (want_rhs) adj[rhs.index] = accumulate(adj[rhs.index], g);
        break;
      case Op::Mul:
        if (want_lhs) adj[lhs.index] = accumulate(adj[lhs.index], mul(g, rhs));
        if (want_rhs) adj[rhs.index] = accumulate(adj[rhs.index], mul(g, lhs));
        break;
      case Op::Scale:
        if (want_lhs) adj[lhs.index] = accumulate(adj[lhs.index], scale(g, n.factor));
        break;
      case Op::MatMul: {
        const bool ta = n.i0 != 0;
        const bool tb = n.i1 != 0;
        if (want_lhs) {
          const NodeId ga = ta ? matmul(rhs, g, tb, true) : matmul(g, rhs, false, !tb);
          adj[lhs.index] = accumulate(adj[lhs.index], ga);
        }
        if (want_rhs) {
          const NodeId gb = tb ? matmul(g, lhs, true, ta) : matmul(lhs, g, !ta, false);
          adj[rhs.index] = accumulate(adj[rhs.index], gb);
        }
        break;
      }
      case Op::Sin:
        if (want_lhs) adj[lhs.index] = accumulate(adj[lhs.index], mul(g, cos(lhs)));
        break;
      case Op::Cos:
        if (want_lhs) adj[lhs.index] = accumulate(adj[lhs.index], scale(mul(g, sin(lhs)), -1.0));
        break;
      case Op::RowSum:
        if (want_lhs) adj[lhs.index] = accumulate(adj[lhs.index], broadcast_cols(g, value(lhs).cols()));
        break;
      case Op::SquaredNorm:
        if (want_lhs) {
          const NodeId ga = scale(mul(broadcast_cols(g, value(lhs).cols()), lhs), 2.0);
          adj[lhs.index] = accumulate(adj[lhs.index], ga);
        }
        break;
      case Op::BroadcastCols:
        if (want_lhs) adj[lhs.index] = accumulate(adj[lhs.index], row_sum(g));
        break;
      case Op::BroadcastRows:
        if (want_lhs) adj[lhs.index] = accumulate(adj[lhs.index], sum_rows(g));
        break;
      case Op::SumRows:
        if (want_lhs) adj[lhs.index] = accumulate(adj[lhs.index], broadcast_rows(g, value(lhs).rows()));
        break;
      case Op::SliceCols:
        if (want_lhs) adj[lhs.index] = accumulate(adj[lhs.index], pad_cols(g, n.i0, value(lhs).cols()));
        break;
      case Op::PadCols:
        if (want_lhs) adj[lhs.index] = accumulate(adj[lhs.index], slice_cols(g, n.i0, value(lhs).cols()));
        break;
    }
  }

  std::vector<NodeId> result;
  result.reserve(wrt.size());
  for (const NodeId w : wrt) {
    if (w.index < end && adj[w.index]) {
      result.push_back(*adj[w.index]);
    } else {
      const Matrix& v = value(w);
      result.push_back(constant(Matrix::Zero(v.rows(), v.cols())));
    }
  }
  return result;
}

std::vector<double> Tape::parameter_gradient(NodeId output) {
  check(value(output).size() == 1, "parameter_gradient needs a scalar output");
  const std::vector<NodeId> leaves = parameter_leaves_;
  const std::vector<NodeId> grads = gradient(output, leaves);
  std::vector<double> flat(params_.size(), 0.0);
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    const Node& leaf = nodes_[leaves[k].index];
    const Matrix& g = value(grads[k]);
    for (Eigen::Index j = 0; j < g.size(); ++j) {
      flat[leaf.offset + static_cast<std::size_t>(j)] += g.data()[j];
    }
  }
  return flat;
}

Matrix evaluate(const Builder& f, const Matrix& input, std::span<const double> params) {
  Tape tape(params);
  const NodeId x = tape.input(input);
  Matrix out = tape.value(f(tape, x));
  require_finite(out, "graph evaluation");
  return out;
}

GradResult input_gradient(const Builder& f, const Matrix& input, std::span<const double> params) {
  Tape tape(params);
  const NodeId x = tape.input(input);
  const NodeId y = f(tape, x);
  check(tape.value(y).cols() == 1, "input_gradient needs one output per row");
  const NodeId wrt[] = {x};
  const NodeId g = tape.gradient(y, wrt)[0];
  GradResult r{tape.value(y), tape.value(g), {}};
  require_finite(r.value, "graph evaluation");
  require_finite(r.input_grad, "input gradient");
  return r;
}

std::vector<double> second_order_param_gradient(const Builder& f, const GradientLossBuilder& loss,
                                                const Matrix& input, std::span<const double> params) {
  Tape tape(params);
  const NodeId x = tape.input(input);
  const NodeId y = f(tape, x);
  const NodeId wrt[] = {x};
  const NodeId gx = tape.gradient(y, wrt)[0];
  const NodeId l = loss(tape, x, gx);
  std::vector<double> g = tape.parameter_gradient(l);
  for (const double v : g) {
    require_finite(v, "second-order parameter gradient");
  }
  return g;
}

Matrix vjp(const Builder& field, const Matrix& input, std::span<const double> params, const Matrix& cotangent) {
  Tape tape(params);
  const NodeId x = tape.input(input);
  const NodeId y = field(tape, x);
  check(tape.value(y).rows() == cotangent.rows() && tape.value(y).cols() == cotangent.cols(),
        "vjp cotangent shape mismatch");
  const NodeId u = tape.constant(cotangent);
  const NodeId wrt[] = {x};
  Matrix out = tape.value(tape.gradient(y, wrt, u)[0]);
  require_finite(out, "vjp");
  return out;
}

Matrix jvp(const Builder& field, const Matrix& input, std::span<const double> params, const Matrix& direction) {
  check(direction.rows() == input.rows() && direction.cols() == input.cols(), "jvp direction shape mismatch");
  Tape tape(params);
  const NodeId x = tape.input(input);
  const NodeId y = field(tape, x);
  // u -> u^T J is linear; differentiating <u^T J, v> in u yields J v.
  const Matrix& yv = tape.value(y);
  const NodeId u = tape.input(Matrix::Zero(yv.rows(), yv.cols()));
  const NodeId wrt_x[] = {x};
  const NodeId ut_j = tape.gradient(y, wrt_x, u)[0];
  const NodeId pairing = tape.row_sum(tape.mul(ut_j, tape.constant(direction)));
  const NodeId wrt_u[] = {u};
  Matrix out = tape.value(tape.gradient(pairing, wrt_u)[0]);
  require_finite(out, "jvp");
  return out;
}

}  // namespace edm2d::grad
