// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ript/diffcore/tensor.hpp"

namespace ript::diffcore {

enum class Op {
  input,
  constant_ref,
  param,
  matmul,
  add,
  sub,
  mul,
  div,
  scale,
  add_scalar,
  tanh,
  relu,
  exp,
  log,
  abs,
  softplus,
  square,
  softmax,
  log_softmax,
  sum,
  mean,
  row_sum,
  gather,
  segment_sum,
  clamp,
  minimum,
  custom,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::constant_ref: return "constant";
    case Op::param: return "param";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::scale: return "scale";
    case Op::add_scalar: return "add_scalar";
    case Op::tanh: return "tanh";
    case Op::relu: return "relu";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::abs: return "abs";
    case Op::softplus: return "softplus";
    case Op::square: return "square";
    case Op::softmax: return "softmax";
    case Op::log_softmax: return "log_softmax";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::row_sum: return "row_sum";
    case Op::gather: return "gather";
    case Op::segment_sum: return "segment_sum";
    case Op::clamp: return "clamp";
    case Op::minimum: return "minimum";
    case Op::custom: return "custom";
  }
  return "?";
}

// Elementwise op supplied by the caller. `derivative(x, y)` returns dy/dx.
struct ElementwiseFn {
  std::string name;
  std::function<double(double)> value;
  std::function<double(double, double)> derivative;
};

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

inline double softplus_value(double x) {
  // log(1 + e^x) without overflow for large |x|.
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// Define-by-run tape. Node values are computed when a node is created;
// forward() re-evaluates every node in creation order, re-reading leaves that
// reference external tensors. Nodes can only consume earlier nodes, so the
// creation order is a topological order.
class Graph {
 public:
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  struct Node {
    Op op = Op::input;
    std::array<std::size_t, 2> in{npos, npos};
    Tensor value;
    const Tensor* ref = nullptr;
    Tensor* param = nullptr;
    std::vector<double> grad;
    bool requires_grad = false;
    double a = 0.0;
    double b = 0.0;
    std::vector<std::size_t> index;
    std::shared_ptr<const ElementwiseFn> fn;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  // ---- leaves ----
  Var input(Tensor t) {
    Node n;
    n.op = Op::input;
    n.value = std::move(t);
    n.value.grad.clear();
    return push(std::move(n));
  }
  // Read-only view of external storage; no gradient flows into it.
  Var constant(const Tensor& t) {
    Node n;
    n.op = Op::constant_ref;
    n.ref = &t;
    return push(std::move(n));
  }
  // Trainable leaf; backward() accumulates into p.grad.
  Var param(Tensor& p) {
    Node n;
    n.op = Op::param;
    n.ref = &p;
    n.param = &p;
    n.requires_grad = true;
    return push(std::move(n));
  }

  // ---- ops ----
  Var matmul(Var a, Var b) { return binary(Op::matmul, a, b); }
  // Same shape, or b a single row broadcast over the rows of a.
  Var add(Var a, Var b) { return binary(Op::add, a, b); }
  Var sub(Var a, Var b) { return binary(Op::sub, a, b); }
  Var mul(Var a, Var b) { return binary(Op::mul, a, b); }
  Var div(Var a, Var b) { return binary(Op::div, a, b); }
  Var minimum(Var a, Var b) { return binary(Op::minimum, a, b); }
  Var scale(Var a, double c) { return unary(Op::scale, a, c); }
  Var add_scalar(Var a, double c) { return unary(Op::add_scalar, a, c); }
  Var neg(Var a) { return scale(a, -1.0); }
  Var tanh(Var a) { return unary(Op::tanh, a); }
  Var relu(Var a) { return unary(Op::relu, a); }
  Var exp(Var a) { return unary(Op::exp, a); }
  Var log(Var a) { return unary(Op::log, a); }
  Var abs(Var a) { return unary(Op::abs, a); }
  Var softplus(Var a) { return unary(Op::softplus, a); }
  Var square(Var a) { return unary(Op::square, a); }
  Var softmax(Var a) { return unary(Op::softmax, a); }
  Var log_softmax(Var a) { return unary(Op::log_softmax, a); }
  Var sum(Var a) { return unary(Op::sum, a); }
  Var mean(Var a) { return unary(Op::mean, a); }
  Var row_sum(Var a) { return unary(Op::row_sum, a); }
  Var clamp(Var a, double lo, double hi) { return unary(Op::clamp, a, lo, hi); }

  // out[i] = a[i, index[i]]
  Var gather(Var a, std::vector<std::size_t> index) {
    Node n;
    n.op = Op::gather;
    n.in = {a.id, npos};
    n.index = std::move(index);
    return push_op(std::move(n));
  }
  // out[s] = sum of a[offsets[s] .. offsets[s+1]), accumulated in order.
  Var segment_sum(Var a, std::vector<std::size_t> offsets) {
    Node n;
    n.op = Op::segment_sum;
    n.in = {a.id, npos};
    n.index = std::move(offsets);
    return push_op(std::move(n));
  }
  Var elementwise(Var a, std::shared_ptr<const ElementwiseFn> fn) {
    Node n;
    n.op = Op::custom;
    n.in = {a.id, npos};
    n.fn = std::move(fn);
    return push_op(std::move(n));
  }

  // ---- evaluation ----
  const Tensor& value(Var v) const {
    const Node& n = node(v);
    return n.ref ? *n.ref : n.value;
  }
  std::span<const double> grad(Var v) const { return node(v).grad; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw std::out_of_range("graph: unknown node id");
    return nodes_[v.id];
  }
  Var last() const {
    if (nodes_.empty()) throw std::logic_error("graph: empty");
    return Var{nodes_.size() - 1};
  }

  const Tensor& forward() {
    for (auto& n : nodes_)
      if (n.op != Op::input && n.op != Op::constant_ref && n.op != Op::param) compute(n);
    return value(last());
  }

  void backward() { backward(last()); }

  void backward(Var out) {
    Node& root = nodes_.at(out.id);
    if (value(out).size() != 1)
      throw ShapeError(std::string("backward: output must be scalar, got shape ") +
                       shape_str(value(out).shape) + " from op " + op_name(root.op));
    for (std::size_t i = 0; i <= out.id; ++i) nodes_[i].grad.clear();
    root.grad.assign(1, 1.0);
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.requires_grad) continue;
      if (n.op == Op::param) {
        n.param->ensure_grad();
        for (std::size_t k = 0; k < n.grad.size(); ++k) n.param->grad[k] += n.grad[k];
        continue;
      }
      propagate(n);
    }
  }

  // Parameters bound into this graph, in creation order.
  std::vector<Tensor*> parameters() const {
    std::vector<Tensor*> out;
    for (const auto& n : nodes_)
      if (n.op == Op::param && std::find(out.begin(), out.end(), n.param) == out.end())
        out.push_back(n.param);
    return out;
  }

 private:
  std::vector<Node> nodes_;

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var push_op(Node n) {
    for (auto id : n.in) {
      if (id == npos) continue;
      if (id >= nodes_.size()) throw std::out_of_range("graph: input id out of range");
      n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
    }
    compute(n);
    return push(std::move(n));
  }

  Var unary(Op op, Var a, double x = 0.0, double y = 0.0) {
    Node n;
    n.op = op;
    n.in = {a.id, npos};
    n.a = x;
    n.b = y;
    return push_op(std::move(n));
  }

  Var binary(Op op, Var a, Var b) {
    Node n;
    n.op = op;
    n.in = {a.id, b.id};
    return push_op(std::move(n));
  }

  const Tensor& in_value(const Node& n, int k) const {
    const Node& src = nodes_[n.in[k]];
    return src.ref ? *src.ref : src.value;
  }

  static std::vector<double>& in_grad(Node& src) {
    std::size_t sz = src.ref ? src.ref->size() : src.value.size();
    if (src.grad.size() != sz) src.grad.assign(sz, 0.0);
    return src.grad;
  }

  [[noreturn]] static void mismatch(Op op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + shape_str(a.shape) +
                     " and " + shape_str(b.shape));
  }

  static bool is_row_broadcast(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2) return false;
    std::size_t n = a.shape[1];
    return (b.rank() == 2 && b.shape[0] == 1 && b.shape[1] == n) ||
           (b.rank() == 1 && b.shape[0] == n);
  }

  void compute(Node& n) {
    const Tensor& x = in_value(n, 0);
    switch (n.op) {
      case Op::matmul: {
        const Tensor& y = in_value(n, 1);
        if (x.rank() != 2 || y.rank() != 2 || x.shape[1] != y.shape[0]) mismatch(n.op, x, y);
        std::size_t m = x.shape[0], k = x.shape[1], c = y.shape[1];
        n.value.shape = {m, c};
        n.value.values.assign(m * c, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
          double* out = &n.value.values[i * c];
          for (std::size_t p = 0; p < k; ++p) {
            double xv = x.values[i * k + p];
            if (xv == 0.0) continue;
            const double* yr = &y.values[p * c];
            for (std::size_t j = 0; j < c; ++j) out[j] += xv * yr[j];
          }
        }
        return;
      }
      case Op::add:
      case Op::sub: {
        const Tensor& y = in_value(n, 1);
        double sign = n.op == Op::add ? 1.0 : -1.0;
        n.value.shape = x.shape;
        n.value.values.resize(x.size());
        if (x.shape == y.shape) {
          for (std::size_t i = 0; i < x.size(); ++i) n.value.values[i] = x.values[i] + sign * y.values[i];
        } else if (is_row_broadcast(x, y)) {
          std::size_t c = x.shape[1];
          for (std::size_t i = 0; i < x.size(); ++i)
            n.value.values[i] = x.values[i] + sign * y.values[i % c];
        } else {
          mismatch(n.op, x, y);
        }
        return;
      }
      case Op::mul:
      case Op::div:
      case Op::minimum: {
        const Tensor& y = in_value(n, 1);
        if (x.shape != y.shape) mismatch(n.op, x, y);
        n.value.shape = x.shape;
        n.value.values.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
          double u = x.values[i], v = y.values[i];
          n.value.values[i] = n.op == Op::mul ? u * v : n.op == Op::div ? u / v : std::min(u, v);
        }
        return;
      }
      case Op::softmax:
      case Op::log_softmax: {
        n.value.shape = x.shape;
        n.value.values.resize(x.size());
        std::size_t c = x.cols();
        if (c == 0) return;
        for (std::size_t r = 0; r < x.size() / c; ++r) {
          const double* in = &x.values[r * c];
          double* out = &n.value.values[r * c];
          double mx = *std::max_element(in, in + c);
          double s = 0.0;
          for (std::size_t j = 0; j < c; ++j) s += std::exp(in[j] - mx);
          if (n.op == Op::softmax) {
            for (std::size_t j = 0; j < c; ++j) out[j] = std::exp(in[j] - mx) / s;
          } else {
            double lse = mx + std::log(s);
            for (std::size_t j = 0; j < c; ++j) out[j] = in[j] - lse;
          }
        }
        return;
      }
      case Op::sum:
      case Op::mean: {
        double s = 0.0;
        for (double v : x.values) s += v;
        if (n.op == Op::mean) {
          if (x.size() == 0) throw ShapeError("mean: empty tensor");
          s /= static_cast<double>(x.size());
        }
        n.value = Tensor::scalar(s);
        return;
      }
      case Op::row_sum: {
        if (x.rank() != 2) throw ShapeError("row_sum: expected rank-2 input, got " + shape_str(x.shape));
        std::size_t m = x.shape[0], c = x.shape[1];
        n.value.shape = {m};
        n.value.values.assign(m, 0.0);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < c; ++j) n.value.values[i] += x.values[i * c + j];
        return;
      }
      case Op::gather: {
        if (x.rank() != 2 || n.index.size() != x.shape[0])
          throw ShapeError("gather: input " + shape_str(x.shape) + " with " +
                           std::to_string(n.index.size()) + " indices");
        std::size_t c = x.shape[1];
        n.value.shape = {n.index.size()};
        n.value.values.resize(n.index.size());
        for (std::size_t i = 0; i < n.index.size(); ++i) {
          if (n.index[i] >= c)
            throw std::out_of_range("gather: index " + std::to_string(n.index[i]) +
                                    " out of range for width " + std::to_string(c));
          n.value.values[i] = x.values[i * c + n.index[i]];
        }
        return;
      }
      case Op::segment_sum: {
        if (n.index.empty() || n.index.front() != 0 || n.index.back() != x.size() ||
            !std::is_sorted(n.index.begin(), n.index.end()))
          throw ShapeError("segment_sum: offsets do not partition input of shape " + shape_str(x.shape));
        std::size_t s = n.index.size() - 1;
        n.value.shape = {s};
        n.value.values.assign(s, 0.0);
        for (std::size_t k = 0; k < s; ++k)
          for (std::size_t i = n.index[k]; i < n.index[k + 1]; ++i) n.value.values[k] += x.values[i];
        return;
      }
      default:
        break;
    }
    // Elementwise unary.
    n.value.shape = x.shape;
    n.value.values.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      double u = x.values[i];
      double& out = n.value.values[i];
      switch (n.op) {
        case Op::scale: out = u * n.a; break;
        case Op::add_scalar: out = u + n.a; break;
        case Op::tanh: out = std::tanh(u); break;
        case Op::relu: out = u > 0.0 ? u : 0.0; break;
        case Op::exp: out = std::exp(u); break;
        case Op::log: out = std::log(u); break;
        case Op::abs: out = std::fabs(u); break;
        case Op::softplus: out = softplus_value(u); break;
        case Op::square: out = u * u; break;
        case Op::clamp: out = std::clamp(u, n.a, n.b); break;
        case Op::custom: out = n.fn->value(u); break;
        default: throw std::logic_error(std::string("graph: cannot evaluate op ") + op_name(n.op));
      }
    }
  }

  void propagate(Node& n) {
    const std::vector<double>& g = n.grad;
    Node& src0 = nodes_[n.in[0]];
    const Tensor& x = in_value(n, 0);
    const Tensor& out = n.value;
    switch (n.op) {
      case Op::matmul: {
        Node& src1 = nodes_[n.in[1]];
        const Tensor& y = in_value(n, 1);
        std::size_t m = x.shape[0], k = x.shape[1], c = y.shape[1];
        if (src0.requires_grad) {
          auto& gx = in_grad(src0);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < c; ++j) s += g[i * c + j] * y.values[p * c + j];
              gx[i * k + p] += s;
            }
        }
        if (src1.requires_grad) {
          auto& gy = in_grad(src1);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double xv = x.values[i * k + p];
              if (xv == 0.0) continue;
              for (std::size_t j = 0; j < c; ++j) gy[p * c + j] += xv * g[i * c + j];
            }
        }
        return;
      }
      case Op::add:
      case Op::sub: {
        Node& src1 = nodes_[n.in[1]];
        double sign = n.op == Op::add ? 1.0 : -1.0;
        if (src0.requires_grad) {
          auto& gx = in_grad(src0);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (src1.requires_grad) {
          auto& gy = in_grad(src1);
          std::size_t c = gy.size();
          for (std::size_t i = 0; i < g.size(); ++i) gy[i % c] += sign * g[i];
        }
        return;
      }
      case Op::mul:
      case Op::div:
      case Op::minimum: {
        Node& src1 = nodes_[n.in[1]];
        const Tensor& y = in_value(n, 1);
        if (src0.requires_grad) {
          auto& gx = in_grad(src0);
          for (std::size_t i = 0; i < g.size(); ++i) {
            double d = n.op == Op::mul   ? y.values[i]
                       : n.op == Op::div ? 1.0 / y.values[i]
                                         : (x.values[i] <= y.values[i] ? 1.0 : 0.0);
            gx[i] += g[i] * d;
          }
        }
        if (src1.requires_grad) {
          auto& gy = in_grad(src1);
          for (std::size_t i = 0; i < g.size(); ++i) {
            double d = n.op == Op::mul   ? x.values[i]
                       : n.op == Op::div ? -x.values[i] / (y.values[i] * y.values[i])
                                         : (x.values[i] <= y.values[i] ? 0.0 : 1.0);
            gy[i] += g[i] * d;
          }
        }
        return;
      }
      case Op::softmax: {
        auto& gx = in_grad(src0);
        std::size_t c = x.cols();
        for (std::size_t r = 0; r < x.size() / c; ++r) {
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * out.values[r * c + j];
          for (std::size_t j = 0; j < c; ++j)
            gx[r * c + j] += out.values[r * c + j] * (g[r * c + j] - dot);
        }
        return;
      }
      case Op::log_softmax: {
        auto& gx = in_grad(src0);
        std::size_t c = x.cols();
        for (std::size_t r = 0; r < x.size() / c; ++r) {
          double gs = 0.0;
          for (std::size_t j = 0; j < c; ++j) gs += g[r * c + j];
          for (std::size_t j = 0; j < c; ++j)
            gx[r * c + j] += g[r * c + j] - std::exp(out.values[r * c + j]) * gs;
        }
        return;
      }
      case Op::sum:
      case Op::mean: {
        auto& gx = in_grad(src0);
        double d = n.op == Op::sum ? g[0] : g[0] / static_cast<double>(x.size());
        for (auto& v : gx) v += d;
        return;
      }
      case Op::row_sum: {
        auto& gx = in_grad(src0);
        std::size_t c = x.shape[1];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i / c];
        return;
      }
      case Op::gather: {
        auto& gx = in_grad(src0);
        std::size_t c = x.shape[1];
        for (std::size_t i = 0; i < n.index.size(); ++i) gx[i * c + n.index[i]] += g[i];
        return;
      }
      case Op::segment_sum: {
        auto& gx = in_grad(src0);
        for (std::size_t k = 0; k + 1 < n.index.size(); ++k)
          for (std::size_t i = n.index[k]; i < n.index[k + 1]; ++i) gx[i] += g[k];
        return;
      }
      default:
        break;
    }
    auto& gx = in_grad(src0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      double u = x.values[i];
      double y = out.values[i];
      double d = 0.0;
      switch (n.op) {
        case Op::scale: d = n.a; break;
        case Op::add_scalar: d = 1.0; break;
        case Op::tanh: d = 1.0 - y * y; break;
        case Op::relu: d = u > 0.0 ? 1.0 : 0.0; break;
        case Op::exp: d = y; break;
        case Op::log: d = 1.0 / u; break;
        case Op::abs: d = u > 0.0 ? 1.0 : (u < 0.0 ? -1.0 : 0.0); break;
        case Op::softplus: d = sigmoid_value(u); break;
        case Op::square: d = 2.0 * u; break;
        case Op::clamp: d = (u >= n.a && u <= n.b) ? 1.0 : 0.0; break;
        case Op::custom: d = n.fn->derivative(u, y); break;
        default: throw std::logic_error(std::string("graph: no gradient rule for ") + op_name(n.op));
      }
      gx[i] += g[i] * d;
    }
  }
};

}  // namespace ript::diffcore
