#pragma once

// Reverse-mode differentiation over batched matrix expression graphs.
//
// Every node holds a (batch x features) matrix. Nodes are evaluated eagerly as
// they are appended, so a Tape is both the graph and its forward values. The
// backward sweep appends its own nodes to the same tape using only the
// primitive set below, which means a recorded gradient can be differentiated
// again (reverse-over-reverse).

#include "edm2d/tensor.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace edm2d::grad {

using Matrix = Tensor;

struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class Op : std::uint8_t {
  Constant,
  Parameter,
  Input,
  Add,
  Mul,            // elementwise, equal shapes
  Scale,          // multiply by a fixed real
  MatMul,         // op(A) * op(B), op = optional transpose
  Sin,
  Cos,
  RowSum,         // (B x n) -> (B x 1)
  SquaredNorm,    // (B x n) -> (B x 1), row-wise
  BroadcastCols,  // (B x 1) -> (B x n)
  BroadcastRows,  // (1 x n) -> (B x n)
  SumRows,        // (B x n) -> (1 x n)
  SliceCols,      // columns [begin, begin + count)
  PadCols,        // embed into `total` columns starting at `begin`, zeros elsewhere
};

class Tape {
 public:
  /// `params` must outlive the tape; parameter leaves read from it.
  explicit Tape(std::span<const double> params = {});

  NodeId constant(Matrix value);
  NodeId input(Matrix value);
  /// Leaf viewing params[offset, offset + rows*cols) as a row-major matrix.
  NodeId parameter(std::size_t offset, Eigen::Index rows, Eigen::Index cols);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId matmul(NodeId a, NodeId b, bool transpose_a = false, bool transpose_b = false);
  NodeId sin(NodeId a);
  NodeId cos(NodeId a);
  NodeId row_sum(NodeId a);
  NodeId squared_norm(NodeId a);
  NodeId broadcast_cols(NodeId a, Eigen::Index cols);
  NodeId broadcast_rows(NodeId a, Eigen::Index rows);
  NodeId sum_rows(NodeId a);
  NodeId slice_cols(NodeId a, Eigen::Index begin, Eigen::Index count);
  NodeId pad_cols(NodeId a, Eigen::Index begin, Eigen::Index total);

  /// Multiplies row r of `a` by the scalar in row r of the (B x 1) column `weights`.
  NodeId scale_rows(NodeId a, NodeId weights);

  const Matrix& value(NodeId id) const { return nodes_.at(id.index).value; }
  Op op(NodeId id) const { return nodes_.at(id.index).op; }
  std::size_t size() const { return nodes_.size(); }
  std::span<const double> params() const { return params_; }

  /// Records the gradient of sum(seed .* output) with respect to each node in
  /// `wrt`. The seed defaults to all ones. Returned nodes live on this tape and
  /// may be differentiated again. A node in `wrt` that `output` does not
  /// depend on gets a zero constant.
  std::vector<NodeId> gradient(NodeId output, std::span<const NodeId> wrt,
                               std::optional<NodeId> seed = std::nullopt);

  /// Gradient of the (1 x 1) `output` with respect to every parameter leaf,
  /// scattered into a flat vector aligned with params().
  std::vector<double> parameter_gradient(NodeId output);

 private:
  struct Node {
    Op op;
    std::int32_t lhs = -1;
    std::int32_t rhs = -1;
    double factor = 0.0;
    Eigen::Index i0 = 0;  // transpose flag / begin / target width
    Eigen::Index i1 = 0;  // transpose flag / count / total
    std::size_t offset = 0;
    Matrix value;
  };

  NodeId push(Node node);
  NodeId accumulate(std::optional<NodeId> acc, NodeId contribution);

  std::span<const double> params_;
  std::deque<Node> nodes_;
  std::vector<NodeId> parameter_leaves_;
};

/// Records a function of one input leaf onto a tape and returns its output node.
using Builder = std::function<NodeId(Tape&, NodeId input)>;

/// Records a scalar-per-row loss of (input, gradient-of-inner-function).
using GradientLossBuilder = std::function<NodeId(Tape&, NodeId input, NodeId input_grad)>;

struct GradResult {
  Matrix value;                   // (B x 1) function values
  Matrix input_grad;              // same shape as the input
  std::vector<double> param_grad; // empty unless requested
};

/// Runs `f` forward on `input`.
Matrix evaluate(const Builder& f, const Matrix& input, std::span<const double> params);

/// Row-wise gradient of a (B x 1) function with respect to its input.
GradResult input_gradient(const Builder& f, const Matrix& input, std::span<const double> params);

/// Gradient over parameters of loss(x, grad_x f(x)), where `loss` returns a
/// (1 x 1) node. The inner gradient is recorded and differentiated again.
std::vector<double> second_order_param_gradient(const Builder& f, const GradientLossBuilder& loss,
                                                const Matrix& input,
                                                std::span<const double> params);

/// Row-wise Jacobian-vector product J(x) v of a (B x d) -> (B x d) field.
Matrix jvp(const Builder& field, const Matrix& input, std::span<const double> params,
           const Matrix& direction);

/// Row-wise vector-Jacobian product u^T J(x).
Matrix vjp(const Builder& field, const Matrix& input, std::span<const double> params,
           const Matrix& cotangent);

}  // namespace edm2d::grad
