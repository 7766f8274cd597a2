#include "adva/graph.hpp"

#include <algorithm>
#include <cmath>

namespace adva {

const char* node_kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::Input: return "input";
    case NodeKind::Constant: return "constant";
    case NodeKind::MatMul: return "matmul";
    case NodeKind::Add: return "add";
    case NodeKind::Mul: return "mul";
    case NodeKind::Relu: return "relu";
    case NodeKind::Softmax: return "softmax";
    case NodeKind::Log: return "log";
    case NodeKind::Exp: return "exp";
    case NodeKind::Mean: return "mean";
    case NodeKind::Neg: return "neg";
    case NodeKind::ConcatRows: return "concat_rows";
    case NodeKind::RowOuter: return "row_outer";
    case NodeKind::Reshape: return "reshape";
    case NodeKind::GradReverse: return "grad_reverse";
  }
  return "?";
}

std::string Graph::describe(NodeId id) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(id));
  std::string s = "node #" + std::to_string(id) + " (" + node_kind_name(n.kind);
  if (!n.name.empty()) s += " '" + n.name + "'";
  s += ")";
  return s;
}

void Graph::check_parent(NodeId p, const char* op) const {
  require(p >= 0 && static_cast<std::size_t>(p) < nodes_.size(),
          std::string(op) + ": parent id " + std::to_string(p) + " not in graph");
}

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::input(const std::string& name) {
  require(!name.empty(), "input: name must be non-empty");
  auto it = inputs_.find(name);
  if (it != inputs_.end()) return it->second;
  NodeId id = push(Node{NodeKind::Input, {}, name, {}, {}, 1.0, false, false});
  inputs_[name] = id;
  return id;
}

NodeId Graph::constant(Tensor value, std::string label) {
  value.validate();
  return push(Node{NodeKind::Constant, {}, std::move(label), std::move(value), {}, 1.0, false, false});
}

NodeId Graph::matmul(NodeId a, NodeId b, bool trans_a, bool trans_b) {
  check_parent(a, "matmul");
  check_parent(b, "matmul");
  return push(Node{NodeKind::MatMul, {a, b}, "", {}, {}, 1.0, trans_a, trans_b});
}

NodeId Graph::add(NodeId a, NodeId b) {
  check_parent(a, "add");
  check_parent(b, "add");
  return push(Node{NodeKind::Add, {a, b}, "", {}, {}, 1.0, false, false});
}

NodeId Graph::mul(NodeId a, NodeId b) {
  check_parent(a, "mul");
  check_parent(b, "mul");
  return push(Node{NodeKind::Mul, {a, b}, "", {}, {}, 1.0, false, false});
}

NodeId Graph::relu(NodeId a) {
  check_parent(a, "relu");
  return push(Node{NodeKind::Relu, {a}, "", {}, {}, 1.0, false, false});
}

NodeId Graph::softmax(NodeId a) {
  check_parent(a, "softmax");
  return push(Node{NodeKind::Softmax, {a}, "", {}, {}, 1.0, false, false});
}

NodeId Graph::log(NodeId a) {
  check_parent(a, "log");
  return push(Node{NodeKind::Log, {a}, "", {}, {}, 1.0, false, false});
}

NodeId Graph::exp(NodeId a) {
  check_parent(a, "exp");
  return push(Node{NodeKind::Exp, {a}, "", {}, {}, 1.0, false, false});
}

NodeId Graph::mean(NodeId a) {
  check_parent(a, "mean");
  return push(Node{NodeKind::Mean, {a}, "", {}, {}, 1.0, false, false});
}

NodeId Graph::neg(NodeId a) {
  check_parent(a, "neg");
  return push(Node{NodeKind::Neg, {a}, "", {}, {}, 1.0, false, false});
}

NodeId Graph::concat_rows(NodeId a, NodeId b) {
  check_parent(a, "concat_rows");
  check_parent(b, "concat_rows");
  return push(Node{NodeKind::ConcatRows, {a, b}, "", {}, {}, 1.0, false, false});
}

NodeId Graph::row_outer(NodeId a, NodeId b) {
  check_parent(a, "row_outer");
  check_parent(b, "row_outer");
  return push(Node{NodeKind::RowOuter, {a, b}, "", {}, {}, 1.0, false, false});
}

NodeId Graph::reshape(NodeId a, Shape target) {
  check_parent(a, "reshape");
  require(!target.empty(), "reshape: target shape must be non-empty");
  return push(Node{NodeKind::Reshape, {a}, "", {}, std::move(target), 1.0, false, false});
}

NodeId Graph::grad_reverse(NodeId a, double lambda) {
  check_parent(a, "grad_reverse");
  return push(Node{NodeKind::GradReverse, {a}, "", {}, {}, lambda, false, false});
}

NodeId Graph::scale_scalar(NodeId a, double factor) {
  check_parent(a, "scale_scalar");
  return mul(a, constant(Tensor::scalar(factor)));
}

void Graph::set_output(NodeId id) {
  check_parent(id, "set_output");
  output_ = id;
}

NodeId Graph::output() const {
  require(output_ >= 0, "graph: no output node set");
  return output_;
}

const Tensor& EvalContext::value(NodeId id) const {
  require(forward_done_, "eval context: forward has not been run");
  require(id >= 0 && static_cast<std::size_t>(id) < values_.size(), "eval context: bad node id");
  return values_[static_cast<std::size_t>(id)];
}

namespace {

// Plain row-major matrix product with optional transposes on either operand.
std::vector<double> matmul_values(const std::vector<double>& a, std::size_t ar, std::size_t ac,
                                  bool ta, const std::vector<double>& b, std::size_t br,
                                  std::size_t bc, bool tb) {
  std::size_t m = ta ? ac : ar;
  std::size_t k = ta ? ar : ac;
  std::size_t n = tb ? br : bc;
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double av = ta ? a[p * ac + i] : a[i * ac + p];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        double bv = tb ? b[j * bc + p] : b[p * bc + j];
        out[i * n + j] += av * bv;
      }
    }
  }
  return out;
}

Tensor eval_node(const Graph& g, const Node& n, NodeId id, const std::vector<Tensor>& vals) {
  auto where = [&]() { return g.describe(id); };
  switch (n.kind) {
    case NodeKind::Input:
    case NodeKind::Constant:
      fail("eval_node: leaf reached");  // handled by caller
    case NodeKind::MatMul: {
      const Tensor& a = vals[static_cast<std::size_t>(n.parents[0])];
      const Tensor& b = vals[static_cast<std::size_t>(n.parents[1])];
      require(a.is_matrix() && b.is_matrix(), where() + ": operands must be matrices, got " +
                                                  shape_str(a.shape) + " and " + shape_str(b.shape));
      std::size_t inner_a = n.trans_a ? a.rows() : a.cols();
      std::size_t inner_b = n.trans_b ? b.cols() : b.rows();
      require(inner_a == inner_b, where() + ": inner dimensions " + std::to_string(inner_a) +
                                      " vs " + std::to_string(inner_b));
      std::size_t m = n.trans_a ? a.cols() : a.rows();
      std::size_t c = n.trans_b ? b.rows() : b.cols();
      return Tensor({m, c}, matmul_values(a.values, a.rows(), a.cols(), n.trans_a, b.values,
                                          b.rows(), b.cols(), n.trans_b));
    }
    case NodeKind::Add:
    case NodeKind::Mul: {
      const Tensor& a = vals[static_cast<std::size_t>(n.parents[0])];
      const Tensor& b = vals[static_cast<std::size_t>(n.parents[1])];
      require(a.shape == b.shape, where() + ": shape mismatch " + shape_str(a.shape) + " vs " +
                                      shape_str(b.shape) + " (no broadcasting)");
      Tensor out = a;
      if (n.kind == NodeKind::Add) {
        for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += b.values[i];
      } else {
        for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= b.values[i];
      }
      return out;
    }
    case NodeKind::Relu: {
      Tensor out = vals[static_cast<std::size_t>(n.parents[0])];
      for (double& v : out.values) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case NodeKind::Softmax: {
      const Tensor& a = vals[static_cast<std::size_t>(n.parents[0])];
      require(a.is_matrix(), where() + ": softmax expects a matrix, got " + shape_str(a.shape));
      Tensor out = a;
      std::size_t r = a.rows(), c = a.cols();
      for (std::size_t i = 0; i < r; ++i) {
        double mx = out.at(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, out.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          double e = std::exp(out.at(i, j) - mx);
          out.at(i, j) = e;
          sum += e;
        }
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= sum;
      }
      return out;
    }
    case NodeKind::Log: {
      Tensor out = vals[static_cast<std::size_t>(n.parents[0])];
      for (std::size_t i = 0; i < out.values.size(); ++i) {
        require(out.values[i] > 0.0, where() + ": log of non-positive value " +
                                         std::to_string(out.values[i]) + " at flat index " +
                                         std::to_string(i));
        out.values[i] = std::log(out.values[i]);
      }
      return out;
    }
    case NodeKind::Exp: {
      Tensor out = vals[static_cast<std::size_t>(n.parents[0])];
      for (std::size_t i = 0; i < out.values.size(); ++i) {
        out.values[i] = std::exp(out.values[i]);
        require(std::isfinite(out.values[i]),
                where() + ": exp overflow at flat index " + std::to_string(i));
      }
      return out;
    }
    case NodeKind::Mean: {
      const Tensor& a = vals[static_cast<std::size_t>(n.parents[0])];
      double s = 0.0;
      for (double v : a.values) s += v;
      return Tensor::scalar(s / static_cast<double>(a.values.size()));
    }
    case NodeKind::Neg: {
      Tensor out = vals[static_cast<std::size_t>(n.parents[0])];
      for (double& v : out.values) v = -v;
      return out;
    }
    case NodeKind::ConcatRows: {
      const Tensor& a = vals[static_cast<std::size_t>(n.parents[0])];
      const Tensor& b = vals[static_cast<std::size_t>(n.parents[1])];
      require(a.is_matrix() && b.is_matrix() && a.cols() == b.cols(),
              where() + ": cannot stack " + shape_str(a.shape) + " on " + shape_str(b.shape));
      return vstack(a, b);
    }
    case NodeKind::RowOuter: {
      const Tensor& a = vals[static_cast<std::size_t>(n.parents[0])];
      const Tensor& b = vals[static_cast<std::size_t>(n.parents[1])];
      require(a.is_matrix() && b.is_matrix() && a.rows() == b.rows(),
              where() + ": row counts must match, got " + shape_str(a.shape) + " and " +
                  shape_str(b.shape));
      std::size_t r = a.rows(), f = a.cols(), k = b.cols();
      Tensor out = Tensor::zeros({r, f * k});
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t u = 0; u < f; ++u)
          for (std::size_t v = 0; v < k; ++v)
            out.values[i * f * k + u * k + v] = a.at(i, u) * b.at(i, v);
      return out;
    }
    case NodeKind::Reshape: {
      const Tensor& a = vals[static_cast<std::size_t>(n.parents[0])];
      require(shape_numel(n.target_shape) == a.numel(),
              where() + ": cannot reshape " + shape_str(a.shape) + " to " +
                  shape_str(n.target_shape));
      return Tensor(n.target_shape, a.values);
    }
    case NodeKind::GradReverse:
      return vals[static_cast<std::size_t>(n.parents[0])];
  }
  fail("eval_node: unreachable");
}

}  // namespace

Tensor forward(const Graph& g, const Bindings& inputs, EvalContext& ctx) {
  require(g.has_output(), "forward: graph has no output node");
  ctx.graph_ = &g;
  ctx.forward_done_ = false;
  ctx.values_.assign(g.size(), Tensor{});
  ctx.needs_grad_.assign(g.size(), false);

  for (const auto& [name, id] : g.inputs()) {
    auto it = inputs.find(name);
    require(it != inputs.end(), "forward: input '" + name + "' not bound");
    it->second.validate();
    require(it->second.all_finite(), "forward: input '" + name + "' contains non-finite values");
  }

  const auto& nodes = g.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    NodeId id = static_cast<NodeId>(i);
    if (n.kind == NodeKind::Input) {
      const Tensor& bound = inputs.at(n.name);
      ctx.values_[i] = bound;
      ctx.needs_grad_[i] = bound.requires_grad;
    } else if (n.kind == NodeKind::Constant) {
      ctx.values_[i] = n.payload;
    } else {
      ctx.values_[i] = eval_node(g, n, id, ctx.values_);
      for (NodeId p : n.parents)
        if (ctx.needs_grad_[static_cast<std::size_t>(p)]) ctx.needs_grad_[i] = true;
    }
  }
  ctx.forward_done_ = true;
  return ctx.values_[static_cast<std::size_t>(g.output())];
}

Tensor forward(const Graph& g, const Bindings& inputs) {
  EvalContext ctx;
  return forward(g, inputs, ctx);
}

std::map<std::string, Tensor> backward(const Graph& g, EvalContext& ctx) {
  require(ctx.forward_done_ && ctx.graph_ == &g, "backward: forward has not been run on this graph");
  const Tensor& out = ctx.values_[static_cast<std::size_t>(g.output())];
  require(out.is_scalar(), "backward: loss must be scalar, got shape " + shape_str(out.shape));

  const auto& nodes = g.nodes();
  std::vector<std::vector<double>> grads(nodes.size());
  auto grad_of = [&](NodeId id) -> std::vector<double>& {
    auto& gbuf = grads[static_cast<std::size_t>(id)];
    if (gbuf.empty()) gbuf.assign(ctx.values_[static_cast<std::size_t>(id)].numel(), 0.0);
    return gbuf;
  };

  grad_of(g.output())[0] = 1.0;

  for (std::size_t ri = nodes.size(); ri-- > 0;) {
    const Node& n = nodes[ri];
    if (!ctx.needs_grad_[ri]) continue;
    if (grads[ri].empty()) continue;  // does not reach the output
    const std::vector<double>& gout = grads[ri];
    auto parent_needs = [&](int slot) {
      return ctx.needs_grad_[static_cast<std::size_t>(n.parents[static_cast<std::size_t>(slot)])];
    };
    auto pval = [&](int slot) -> const Tensor& {
      return ctx.values_[static_cast<std::size_t>(n.parents[static_cast<std::size_t>(slot)])];
    };

    switch (n.kind) {
      case NodeKind::Input:
      case NodeKind::Constant:
        break;
      case NodeKind::MatMul: {
        const Tensor& a = pval(0);
        const Tensor& b = pval(1);
        std::size_t m = n.trans_a ? a.cols() : a.rows();
        std::size_t kk = n.trans_a ? a.rows() : a.cols();
        std::size_t c = n.trans_b ? b.rows() : b.cols();
        // d(opA) = G * opB^T ; d(opB) = opA^T * G, then undo the transposes.
        if (parent_needs(0)) {
          std::vector<double> d_opa =
              matmul_values(gout, m, c, false, b.values, b.rows(), b.cols(), !n.trans_b);
          auto& ga = grad_of(n.parents[0]);
          if (!n.trans_a) {
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += d_opa[i];
          } else {
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t p = 0; p < kk; ++p) ga[p * a.cols() + i] += d_opa[i * kk + p];
          }
        }
        if (parent_needs(1)) {
          std::vector<double> d_opb =
              matmul_values(a.values, a.rows(), a.cols(), !n.trans_a, gout, m, c, false);
          auto& gb = grad_of(n.parents[1]);
          if (!n.trans_b) {
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += d_opb[i];
          } else {
            for (std::size_t p = 0; p < kk; ++p)
              for (std::size_t j = 0; j < c; ++j) gb[j * b.cols() + p] += d_opb[p * c + j];
          }
        }
        break;
      }
      case NodeKind::Add: {
        for (int slot = 0; slot < 2; ++slot) {
          if (!parent_needs(slot)) continue;
          auto& gp = grad_of(n.parents[static_cast<std::size_t>(slot)]);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += gout[i];
        }
        break;
      }
      case NodeKind::Mul: {
        if (parent_needs(0)) {
          auto& gp = grad_of(n.parents[0]);
          const Tensor& b = pval(1);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += gout[i] * b.values[i];
        }
        if (parent_needs(1)) {
          auto& gp = grad_of(n.parents[1]);
          const Tensor& a = pval(0);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += gout[i] * a.values[i];
        }
        break;
      }
      case NodeKind::Relu: {
        if (!parent_needs(0)) break;
        auto& gp = grad_of(n.parents[0]);
        const Tensor& x = pval(0);
        for (std::size_t i = 0; i < gp.size(); ++i)
          if (x.values[i] > 0.0) gp[i] += gout[i];
        break;
      }
      case NodeKind::Softmax: {
        if (!parent_needs(0)) break;
        auto& gp = grad_of(n.parents[0]);
        const Tensor& p = ctx.values_[ri];
        std::size_t r = p.rows(), c = p.cols();
        for (std::size_t i = 0; i < r; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += gout[i * c + j] * p.at(i, j);
          for (std::size_t j = 0; j < c; ++j)
            gp[i * c + j] += p.at(i, j) * (gout[i * c + j] - dot);
        }
        break;
      }
      case NodeKind::Log: {
        if (!parent_needs(0)) break;
        auto& gp = grad_of(n.parents[0]);
        const Tensor& x = pval(0);
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += gout[i] / x.values[i];
        break;
      }
      case NodeKind::Exp: {
        if (!parent_needs(0)) break;
        auto& gp = grad_of(n.parents[0]);
        const Tensor& y = ctx.values_[ri];
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += gout[i] * y.values[i];
        break;
      }
      case NodeKind::Mean: {
        if (!parent_needs(0)) break;
        auto& gp = grad_of(n.parents[0]);
        double share = gout[0] / static_cast<double>(gp.size());
        for (double& v : gp) v += share;
        break;
      }
      case NodeKind::Neg: {
        if (!parent_needs(0)) break;
        auto& gp = grad_of(n.parents[0]);
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] -= gout[i];
        break;
      }
      case NodeKind::ConcatRows: {
        const Tensor& a = pval(0);
        std::size_t split = a.numel();
        if (parent_needs(0)) {
          auto& gp = grad_of(n.parents[0]);
          for (std::size_t i = 0; i < split; ++i) gp[i] += gout[i];
        }
        if (parent_needs(1)) {
          auto& gp = grad_of(n.parents[1]);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += gout[split + i];
        }
        break;
      }
      case NodeKind::RowOuter: {
        const Tensor& a = pval(0);
        const Tensor& b = pval(1);
        std::size_t r = a.rows(), f = a.cols(), k = b.cols();
        if (parent_needs(0)) {
          auto& gp = grad_of(n.parents[0]);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t u = 0; u < f; ++u) {
              double s = 0.0;
              for (std::size_t v = 0; v < k; ++v) s += gout[i * f * k + u * k + v] * b.at(i, v);
              gp[i * f + u] += s;
            }
        }
        if (parent_needs(1)) {
          auto& gp = grad_of(n.parents[1]);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t v = 0; v < k; ++v) {
              double s = 0.0;
              for (std::size_t u = 0; u < f; ++u) s += gout[i * f * k + u * k + v] * a.at(i, u);
              gp[i * k + v] += s;
            }
        }
        break;
      }
      case NodeKind::Reshape: {
        if (!parent_needs(0)) break;
        auto& gp = grad_of(n.parents[0]);
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += gout[i];
        break;
      }
      case NodeKind::GradReverse: {
        if (!parent_needs(0)) break;
        auto& gp = grad_of(n.parents[0]);
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] -= n.lambda * gout[i];
        break;
      }
    }
  }

  std::map<std::string, Tensor> result;
  for (const auto& [name, id] : g.inputs()) {
    std::size_t i = static_cast<std::size_t>(id);
    if (!ctx.needs_grad_[i]) continue;
    const Tensor& v = ctx.values_[i];
    Tensor grad = Tensor::zeros(v.shape);
    if (!grads[i].empty()) grad.values = grads[i];
    result.emplace(name, std::move(grad));
  }
  return result;
}

GradCheckResult grad_check_against(const Graph& g, const Bindings& inputs, double tolerance,
                                   const std::map<std::string, Tensor>& analytic) {
  require(tolerance > 0.0, "grad_check: tolerance must be positive");
  const double h = 1e-5;
  GradCheckResult res;
  res.pass = true;

  for (const auto& [name, grad] : analytic) {
    Bindings work = inputs;
    Tensor& probe = work.at(name);
    for (std::size_t i = 0; i < probe.numel(); ++i) {
      double orig = probe.values[i];
      probe.values[i] = orig + h;
      double fp = forward(g, work).values[0];
      probe.values[i] = orig - h;
      double fm = forward(g, work).values[0];
      probe.values[i] = orig;
      double fd = (fp - fm) / (2.0 * h);
      double err = rel_error(grad.values[i], fd);
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_coordinate = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  res.pass = res.max_rel_error < tolerance;
  return res;
}

GradCheckResult grad_check(const Graph& g, const Bindings& inputs, double tolerance) {
  EvalContext ctx;
  forward(g, inputs, ctx);
  auto grads = backward(g, ctx);
  return grad_check_against(g, inputs, tolerance, grads);
}

}  // namespace adva
