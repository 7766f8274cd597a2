#pragma once

#include <map>
#include <string>
#include <vector>

#include "adva/tensor.hpp"

namespace adva {

using NodeId = int;

enum class NodeKind {
  Input,        // named leaf, bound at forward time
  Constant,     // embedded value, never differentiated
  MatMul,       // 2-D matrix product, optional transposes on either side
  Add,          // elementwise, shapes must match exactly
  Mul,          // elementwise (Hadamard)
  Relu,         // elementwise max(x, 0)
  Softmax,      // row-wise on a matrix
  Log,          // elementwise natural log, domain (0, inf)
  Exp,          // elementwise
  Mean,         // full reduction to shape {1}
  Neg,          // elementwise negation
  ConcatRows,   // vertical stack of two matrices
  RowOuter,     // per-row outer product: (n,f) x (n,k) -> (n, f*k)
  Reshape,      // same numel, new shape
  GradReverse,  // identity forward, backward scales by -lambda
};

const char* node_kind_name(NodeKind k);

struct Node {
  NodeKind kind;
  std::vector<NodeId> parents;
  std::string name;    // binding name for Input, debug label otherwise
  Tensor payload;      // Constant value
  Shape target_shape;  // Reshape
  double lambda = 1.0; // GradReverse
  bool trans_a = false, trans_b = false;  // MatMul
};

/// Static computation graph. Nodes are appended in evaluation order, so the
/// stored order is always a valid topological order and cycles cannot be
/// expressed. Immutable once built (the evaluation cache lives in EvalContext).
class Graph {
 public:
  /// Declares (or retrieves) a named input leaf. Calling twice with the same
  /// name returns the same node, which is how layers share parameters.
  NodeId input(const std::string& name);

  NodeId constant(Tensor value, std::string label = "");
  NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false);
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId relu(NodeId a);
  NodeId softmax(NodeId a);
  NodeId log(NodeId a);
  NodeId exp(NodeId a);
  NodeId mean(NodeId a);
  NodeId neg(NodeId a);
  NodeId concat_rows(NodeId a, NodeId b);
  NodeId row_outer(NodeId a, NodeId b);
  NodeId reshape(NodeId a, Shape target);
  NodeId grad_reverse(NodeId a, double lambda);

  /// Scales by a compile-time scalar: mul with a {1}-shaped constant when `a`
  /// is scalar, otherwise the caller must pass a full-shape constant via mul.
  NodeId scale_scalar(NodeId a, double factor);

  void set_output(NodeId id);
  NodeId output() const;
  bool has_output() const { return output_ >= 0; }

  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  const std::map<std::string, NodeId>& inputs() const { return inputs_; }

  std::string describe(NodeId id) const;

 private:
  NodeId push(Node n);
  void check_parent(NodeId p, const char* op) const;

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> inputs_;
  NodeId output_ = -1;
};

using Bindings = std::map<std::string, Tensor>;

/// Per-evaluation activation cache. One context per thread of control; the
/// graph itself is shared read-only.
class EvalContext {
 public:
  const Tensor& value(NodeId id) const;
  bool has_run() const { return forward_done_; }

 private:
  friend Tensor forward(const Graph&, const Bindings&, EvalContext&);
  friend std::map<std::string, Tensor> backward(const Graph&, EvalContext&);

  std::vector<Tensor> values_;
  std::vector<bool> needs_grad_;  // propagated from bound requires_grad inputs
  bool forward_done_ = false;
  const Graph* graph_ = nullptr;
};

/// Evaluates the graph on the bound inputs and returns the output tensor.
/// Intermediate activations are cached in `ctx` for the backward pass.
/// Fails with the offending node named on any shape or domain violation.
Tensor forward(const Graph& g, const Bindings& inputs, EvalContext& ctx);

/// Convenience overload when the caller does not need gradients.
Tensor forward(const Graph& g, const Bindings& inputs);

/// Reverse-mode sweep from a scalar output. Returns one gradient tensor per
/// requires_grad input, keyed by input name; inputs that do not reach the
/// output get an exact-zero gradient. Requires forward() to have run on `ctx`.
std::map<std::string, Tensor> backward(const Graph& g, EvalContext& ctx);

struct GradCheckResult {
  bool pass = false;
  double max_rel_error = 0.0;
  std::string worst_coordinate;  // "input[i]" of the worst mismatch
};

/// Relative error with the floor the whole suite standardizes on.
inline double rel_error(double a, double b) {
  double denom = std::max(std::max(std::fabs(a), std::fabs(b)), 1e-8);
  return std::fabs(a - b) / denom;
}

/// Central finite differences (step 1e-5) on every coordinate of every
/// requires_grad input, compared against backward().
GradCheckResult grad_check(const Graph& g, const Bindings& inputs, double tolerance);

/// Same comparison against a caller-supplied gradient map. Exists so negative
/// controls can feed a corrupted rule through the identical check.
GradCheckResult grad_check_against(const Graph& g, const Bindings& inputs, double tolerance,
                                   const std::map<std::string, Tensor>& analytic);

}  // namespace adva
