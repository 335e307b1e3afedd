#pragma once

// Reverse-mode automatic differentiation over dense row-major float64 arrays.
//
// Graphs are built define-by-run: every op whose inputs require gradients
// records its inputs and a backward rule on the result node. backward()
// orders the reachable nodes by creation id (inputs are always created before
// the ops that consume them) and runs each rule exactly once.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ahgs/errors.hpp"

namespace ahgs::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  std::uint64_t id = 0;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward;

  /// Gradient buffer of a node, allocated lazily.
  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

namespace detail {
inline std::uint64_t next_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<double> values) {
    return make_leaf(std::move(shape), std::move(values), false);
  }
  static Tensor parameter(Shape shape, std::vector<double> values) {
    return make_leaf(std::move(shape), std::move(values), true);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double v) {
    const std::size_t n = numel(shape);
    return make_leaf(std::move(shape), std::vector<double>(n, v), false);
  }
  static Tensor scalar(double v) { return make_leaf({}, {v}, false); }

  bool defined() const noexcept { return node_ != nullptr; }
  const NodePtr& node() const noexcept { return node_; }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }

  /// Writable view of a leaf's values. Only leaves may be mutated, and only
  /// between graph constructions (optimizer steps, finite differencing).
  std::span<double> mutable_data() {
    if (!node_->leaf) throw ContractError("mutable_data() on non-leaf tensor produced by " + std::string(node_->op));
    return node_->value;
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }

  /// Same values, no history, no gradient.
  Tensor detach() const { return constant(shape(), node_->value); }

 private:
  static Tensor make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel(shape) != values.size()) {
      throw ShapeError("shape " + to_string(shape) + " does not match " + std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<Node>();
    node->id = detail::next_id();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    node->leaf = true;
    return Tensor(std::move(node));
  }

  NodePtr node_;
};

/// Creates the result of an operation. The backward rule is attached only if
/// some input requires a gradient; otherwise the result is a plain constant.
inline Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, const char* op,
                          std::function<void(Node&)> backward) {
  if (numel(shape) != values.size()) {
    throw ShapeError(std::string(op) + ": internal shape mismatch");
  }
  auto node = std::make_shared<Node>();
  node->id = detail::next_id();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    node->leaf = false;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

/// Adds g into input i's gradient when that input participates.
inline void accumulate(Node& self, std::size_t i, std::span<const double> g) {
  Node& in = *self.inputs[i];
  if (!in.requires_grad) return;
  auto& dst = in.grad_buffer();
  for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
}

inline bool wants_grad(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }

/// Ordered record of the operations reachable from a scalar output,
/// inputs before consumers.
class Tape {
 public:
  explicit Tape(const Tensor& output) {
    std::vector<NodePtr> stack{output.node()};
    std::unordered_set<const Node*> seen{output.node().get()};
    while (!stack.empty()) {
      NodePtr n = std::move(stack.back());
      stack.pop_back();
      if (!n->requires_grad) continue;
      for (const auto& in : n->inputs) {
        if (seen.insert(in.get()).second) stack.push_back(in);
      }
      nodes_.push_back(std::move(n));
    }
    std::sort(nodes_.begin(), nodes_.end(), [](const NodePtr& a, const NodePtr& b) { return a->id < b->id; });
  }

  std::span<const NodePtr> nodes() const { return nodes_; }

 private:
  std::vector<NodePtr> nodes_;
};

/// Runs reverse-mode differentiation from a scalar. Leaf gradients accumulate
/// (call zero_grad() between iterations). The tape is consumed: a second call
/// on the same graph is a contract error.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) return;
  Node& root = *loss.node();
  if (!root.leaf && !root.backward) throw ContractError("backward() called twice on the same graph");

  Tape tape(loss);
  for (const auto& n : tape.nodes()) {
    if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
  }
  root.grad_buffer()[0] += 1.0;

  auto nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    Node* n = it->get();
    if (n->leaf) continue;
    if (n->backward) n->backward(*n);
    // release the graph as we go; intermediates are no longer needed
    n->backward = nullptr;
    n->inputs.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

// ---------------------------------------------------------------------------
// broadcasting

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

/// For each linear index of `out`, the linear index of the broadcast source.
inline std::vector<std::size_t> broadcast_index(const Shape& out, const Shape& in) {
  const std::size_t n = numel(out);
  std::vector<std::size_t> map(n);
  const std::size_t r = out.size();
  const std::size_t off = r - in.size();
  std::vector<std::size_t> in_stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = r; i-- > off;) {
    const std::size_t d = in[i - off];
    in_stride[i] = d == 1 ? 0 : s;
    s *= d;
  }
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_stride[i];
    map[k] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out[i]) break;
      idx[i] = 0;
    }
  }
  return map;
}

inline Tensor broadcast_to(const Tensor& t, const Shape& shape) {
  if (t.shape() == shape) return t;
  if (broadcast_shape(t.shape(), shape, "broadcast") != shape) {
    throw ShapeError("broadcast: cannot expand " + to_string(t.shape()) + " to " + to_string(shape));
  }
  auto map = broadcast_index(shape, t.shape());
  std::vector<double> out(map.size());
  for (std::size_t k = 0; k < map.size(); ++k) out[k] = t[map[k]];
  const std::size_t in_size = t.size();
  return make_result(shape, std::move(out), {t}, "broadcast", [map = std::move(map), in_size](Node& self) {
    if (!wants_grad(self, 0)) return;
    std::vector<double> g(in_size, 0.0);
    for (std::size_t k = 0; k < map.size(); ++k) g[map[k]] += self.grad[k];
    accumulate(self, 0, g);
  });
}

namespace detail {

// Elementwise binary op with broadcasting. df returns (dz/dx, dz/dy).
template <class F, class DF>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f, DF df) {
  const Shape shape = broadcast_shape(a.shape(), b.shape(), op);
  const std::size_t n = numel(shape);
  const bool same_a = a.shape() == shape;
  const bool same_b = b.shape() == shape;
  auto map_a = same_a ? std::vector<std::size_t>{} : broadcast_index(shape, a.shape());
  auto map_b = same_b ? std::vector<std::size_t>{} : broadcast_index(shape, b.shape());
  auto ia = [&](std::size_t k) { return same_a ? k : map_a[k]; };
  auto ib = [&](std::size_t k) { return same_b ? k : map_b[k]; };
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = f(a[ia(k)], b[ib(k)]);
  return make_result(shape, std::move(out), {a, b}, op,
                     [map_a = std::move(map_a), map_b = std::move(map_b), df](Node& self) {
                       const Node& na = *self.inputs[0];
                       const Node& nb = *self.inputs[1];
                       const std::size_t n = self.value.size();
                       std::vector<double> ga(na.requires_grad ? na.value.size() : 0, 0.0);
                       std::vector<double> gb(nb.requires_grad ? nb.value.size() : 0, 0.0);
                       for (std::size_t k = 0; k < n; ++k) {
                         const std::size_t ka = map_a.empty() ? k : map_a[k];
                         const std::size_t kb = map_b.empty() ? k : map_b[k];
                         const auto [dx, dy] = df(na.value[ka], nb.value[kb], self.value[k]);
                         if (!ga.empty()) ga[ka] += self.grad[k] * dx;
                         if (!gb.empty()) gb[kb] += self.grad[k] * dy;
                       }
                       if (!ga.empty()) accumulate(self, 0, ga);
                       if (!gb.empty()) accumulate(self, 1, gb);
                     });
}

// Elementwise unary op. df(x, y) returns dy/dx.
template <class F, class DF>
Tensor unary(const Tensor& a, const char* op, F f, DF df) {
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = f(a[k]);
  return make_result(a.shape(), std::move(out), {a}, op, [df](Node& self) {
    if (!wants_grad(self, 0)) return;
    const Node& in = *self.inputs[0];
    std::vector<double> g(self.value.size());
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = self.grad[k] * df(in.value[k], self.value[k]);
    accumulate(self, 0, g);
  });
}

inline void require_all(const Tensor& t, const char* op, bool (*ok)(double), const char* what) {
  for (double v : t.data()) {
    if (!ok(v)) throw DomainError(std::string(op) + ": " + what);
  }
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, "add", [](double x, double y) { return x + y; },
                        [](double, double, double) { return std::pair{1.0, 1.0}; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, "sub", [](double x, double y) { return x - y; },
                        [](double, double, double) { return std::pair{1.0, -1.0}; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, "mul", [](double x, double y) { return x * y; },
                        [](double x, double y, double) { return std::pair{y, x}; });
}
inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::require_all(b, "div", [](double v) { return v != 0.0; }, "division by zero");
  return detail::binary(a, b, "div", [](double x, double y) { return x / y; },
                        [](double, double y, double z) { return std::pair{1.0 / y, -z / y}; });
}
/// Elementwise maximum; ties route the gradient to the first operand.
inline Tensor maximum(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, "max", [](double x, double y) { return x >= y ? x : y; },
                        [](double x, double y, double) { return x >= y ? std::pair{1.0, 0.0} : std::pair{0.0, 1.0}; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
inline Tensor operator-(const Tensor& a, double s) { return sub(a, Tensor::scalar(s)); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }
inline Tensor operator*(double s, const Tensor& a) { return mul(Tensor::scalar(s), a); }
inline Tensor operator/(const Tensor& a, double s) { return div(a, Tensor::scalar(s)); }
inline Tensor operator-(double s, const Tensor& a) { return sub(Tensor::scalar(s), a); }

inline Tensor neg(const Tensor& a) {
  return detail::unary(a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---------------------------------------------------------------------------
// elementwise functions

inline Tensor exp(const Tensor& a) {
  return detail::unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Tensor log(const Tensor& a) {
  detail::require_all(a, "log", [](double v) { return v > 0.0; }, "argument must be positive");
  return detail::unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
inline Tensor sin(const Tensor& a) {
  return detail::unary(a, "sin", [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}
inline Tensor cos(const Tensor& a) {
  return detail::unary(a, "cos", [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}
/// sqrt(0) is allowed in the forward pass; its derivative is taken as 0.
inline Tensor sqrt(const Tensor& a) {
  detail::require_all(a, "sqrt", [](double v) { return v >= 0.0; }, "argument must be non-negative");
  return detail::unary(a, "sqrt", [](double x) { return std::sqrt(x); },
                       [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}
inline Tensor abs(const Tensor& a) {
  return detail::unary(a, "abs", [](double x) { return std::abs(x); },
                       [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}
inline Tensor relu(const Tensor& a) {
  return detail::unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}
inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(a, "sigmoid", detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}
inline Tensor tanh(const Tensor& a) {
  return detail::unary(a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}
inline Tensor softplus(const Tensor& a) {
  return detail::unary(
      a, "softplus", [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return detail::stable_sigmoid(x); });
}
/// x^p. Negative bases need an integral exponent; 0^p needs p >= 1.
inline Tensor power(const Tensor& a, double p) {
  const bool integral = p == std::floor(p);
  for (double v : a.data()) {
    if (v < 0.0 && !integral) throw DomainError("power: negative base with non-integral exponent");
    if (v == 0.0 && p < 1.0 && p != 0.0) throw DomainError("power: zero base with exponent below 1");
  }
  return detail::unary(a, "power", [p](double x) { return std::pow(x, p); },
                       [p](double x, double) { return p == 0.0 ? 0.0 : p * std::pow(x, p - 1.0); });
}
inline Tensor square(const Tensor& a) {
  return detail::unary(a, "power", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---------------------------------------------------------------------------
// reductions

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({}, {s}, {a}, "sum", [](Node& self) {
    if (!wants_grad(self, 0)) return;
    std::vector<double> g(self.inputs[0]->value.size(), self.grad[0]);
    accumulate(self, 0, g);
  });
}

/// Sum along one axis, keeping it with extent 1.
inline Tensor sum(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw ShapeError("sum: axis out of range for " + to_string(a.shape()));
  const auto& s = a.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape = s;
  out_shape[axis] = 1;
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < len; ++j)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += a[(o * len + j) * inner + i];
  return make_result(out_shape, std::move(out), {a}, "sum", [outer, inner, len](Node& self) {
    if (!wants_grad(self, 0)) return;
    std::vector<double> g(outer * len * inner);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < len; ++j)
        for (std::size_t i = 0; i < inner; ++i) g[(o * len + j) * inner + i] = self.grad[o * inner + i];
    accumulate(self, 0, g);
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  return sum(a) * (1.0 / static_cast<double>(a.size()));
}

/// Largest entry; the gradient goes to the first maximizer.
inline Tensor max(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("max of empty tensor");
  const auto it = std::max_element(a.data().begin(), a.data().end());
  const auto arg = static_cast<std::size_t>(it - a.data().begin());
  return make_result({}, {*it}, {a}, "max", [arg](Node& self) {
    if (!wants_grad(self, 0)) return;
    std::vector<double> g(self.inputs[0]->value.size(), 0.0);
    g[arg] = self.grad[0];
    accumulate(self, 0, g);
  });
}

// ---------------------------------------------------------------------------
// linear algebra and layout

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MatrixMap(out.data(), m, n).noalias() = ConstMatrixMap(a.data().data(), m, k) * ConstMatrixMap(b.data().data(), k, n);
  return make_result({a.dim(0), b.dim(1)}, std::move(out), {a, b}, "matmul", [m, k, n](Node& self) {
    const Node& na = *self.inputs[0];
    const Node& nb = *self.inputs[1];
    ConstMatrixMap g(self.grad.data(), m, n);
    if (na.requires_grad) {
      std::vector<double> ga(static_cast<std::size_t>(m * k));
      MatrixMap(ga.data(), m, k).noalias() = g * ConstMatrixMap(nb.value.data(), k, n).transpose();
      accumulate(self, 0, ga);
    }
    if (nb.requires_grad) {
      std::vector<double> gb(static_cast<std::size_t>(k * n));
      MatrixMap(gb.data(), k, n).noalias() = ConstMatrixMap(na.value.data(), m, k).transpose() * g;
      accumulate(self, 1, gb);
    }
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<double> v(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(v), {a}, "reshape", [](Node& self) {
    accumulate(self, 0, self.grad);
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range");
  std::size_t outer = 1, inner = 1, total = 0;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<std::size_t> lens;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) throw ShapeError("concat: mismatched shapes " + to_string(s0) + " and " + to_string(s));
    lens.push_back(s[axis]);
    total += s[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  std::vector<double> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::size_t len = lens[p];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < len * inner; ++j) out[(o * total + offset) * inner + j] = parts[p][o * len * inner + j];
    offset += len;
  }
  return make_result(out_shape, std::move(out), parts, "concat", [lens, outer, inner, total](Node& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < lens.size(); ++p) {
      const std::size_t len = lens[p];
      if (wants_grad(self, p)) {
        std::vector<double> g(outer * len * inner);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < len * inner; ++j) g[o * len * inner + j] = self.grad[(o * total + offset) * inner + j];
        accumulate(self, p, g);
      }
      offset += len;
    }
  });
}

/// Half-open range [begin, end) along one axis.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= a.rank() || begin > end || end > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                     to_string(a.shape()) + " axis " + std::to_string(axis));
  }
  const auto& s = a.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis], w = end - begin;
  Shape out_shape = s;
  out_shape[axis] = w;
  std::vector<double> out(outer * w * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < w * inner; ++j) out[o * w * inner + j] = a[(o * len + begin) * inner + j];
  return make_result(out_shape, std::move(out), {a}, "slice", [outer, inner, len, begin, w](Node& self) {
    if (!wants_grad(self, 0)) return;
    std::vector<double> g(outer * len * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < w * inner; ++j) g[(o * len + begin) * inner + j] = self.grad[o * w * inner + j];
    accumulate(self, 0, g);
  });
}

/// Selects rows (entries of axis 0) by index; repeated indices accumulate.
inline Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  if (a.rank() == 0) throw ShapeError("gather_rows: scalar input");
  const std::size_t row = a.size() / a.dim(0);
  for (std::size_t r : rows) {
    if (r >= a.dim(0)) throw ShapeError("gather_rows: index " + std::to_string(r) + " out of range");
  }
  Shape out_shape = a.shape();
  out_shape[0] = rows.size();
  std::vector<double> out(rows.size() * row);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * row), row, out.begin() + static_cast<std::ptrdiff_t>(i * row));
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result(out_shape, std::move(out), {a}, "gather", [idx = std::move(idx), row](Node& self) {
    if (!wants_grad(self, 0)) return;
    std::vector<double> g(self.inputs[0]->value.size(), 0.0);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < row; ++j) g[idx[i] * row + j] += self.grad[i * row + j];
    accumulate(self, 0, g);
  });
}

/// Scales every vector along the last axis to unit length. Uses the analytic
/// Jacobian (I - v̂v̂ᵀ)/‖v‖; vectors shorter than 1e-12 are a domain error.
inline Tensor normalize(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("normalize: scalar input");
  const std::size_t d = a.shape().back();
  const std::size_t rows = d == 0 ? 0 : a.size() / d;
  std::vector<double> out(a.size()), norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) n2 += a[r * d + j] * a[r * d + j];
    const double n = std::sqrt(n2);
    if (!(n >= 1e-12)) throw DomainError("normalize: vector norm below 1e-12");
    norms[r] = n;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = a[r * d + j] / n;
  }
  return make_result(a.shape(), std::move(out), {a}, "normalize", [d, rows, norms = std::move(norms)](Node& self) {
    if (!wants_grad(self, 0)) return;
    std::vector<double> g(self.value.size());
    for (std::size_t r = 0; r < rows; ++r) {
      const double* u = &self.value[r * d];
      const double* go = &self.grad[r * d];
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += u[j] * go[j];
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] = (go[j] - u[j] * dot) / norms[r];
    }
    accumulate(self, 0, g);
  });
}

// ---------------------------------------------------------------------------
// image ops on (C, H, W) tensors

/// Stride-1 2D convolution (cross-correlation). input (C, H, W), weight
/// (O, C, kh, kw), optional bias (O), symmetric zero padding.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t padding) {
  if (input.rank() != 3 || weight.rank() != 4 || weight.dim(1) != input.dim(0)) {
    throw ShapeError("conv2d: incompatible input " + to_string(input.shape()) + " and weight " + to_string(weight.shape()));
  }
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t O = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
  if (H + 2 * padding < KH || W + 2 * padding < KW) throw ShapeError("conv2d: kernel larger than padded input");
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != O) throw ShapeError("conv2d: bias size mismatch");
  const std::size_t OH = H + 2 * padding - KH + 1, OW = W + 2 * padding - KW + 1;
  const std::size_t K = C * KH * KW, P = OH * OW;

  // im2col: (K, P)
  auto cols = std::make_shared<std::vector<double>>(K * P, 0.0);
  const auto& in = input.data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < KH; ++ky)
      for (std::size_t kx = 0; kx < KW; ++kx) {
        double* row = cols->data() + ((c * KH + ky) * KW + kx) * P;
        for (std::size_t oy = 0; oy < OH; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t ox = 0; ox < OW; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
            row[oy * OW + ox] = in[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)];
          }
        }
      }
  const auto eO = static_cast<Eigen::Index>(O), eK = static_cast<Eigen::Index>(K), eP = static_cast<Eigen::Index>(P);
  std::vector<double> out(O * P);
  MatrixMap(out.data(), eO, eP).noalias() = ConstMatrixMap(weight.data().data(), eO, eK) * ConstMatrixMap(cols->data(), eK, eP);
  if (has_bias)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t p = 0; p < P; ++p) out[o * P + p] += bias[o];

  std::vector<Tensor> inputs{input, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result({O, OH, OW}, std::move(out), inputs, "conv2d",
                     [=](Node& self) {
                       ConstMatrixMap g(self.grad.data(), eO, eP);
                       const Node& nw = *self.inputs[1];
                       if (wants_grad(self, 0)) {
                         std::vector<double> gcols(K * P);
                         MatrixMap(gcols.data(), eK, eP).noalias() = ConstMatrixMap(nw.value.data(), eO, eK).transpose() * g;
                         std::vector<double> gi(C * H * W, 0.0);
                         for (std::size_t c = 0; c < C; ++c)
                           for (std::size_t ky = 0; ky < KH; ++ky)
                             for (std::size_t kx = 0; kx < KW; ++kx) {
                               const double* row = gcols.data() + ((c * KH + ky) * KW + kx) * P;
                               for (std::size_t oy = 0; oy < OH; ++oy) {
                                 const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(padding);
                                 if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                                 for (std::size_t ox = 0; ox < OW; ++ox) {
                                   const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(padding);
                                   if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                   gi[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] += row[oy * OW + ox];
                                 }
                               }
                             }
                         accumulate(self, 0, gi);
                       }
                       if (nw.requires_grad) {
                         std::vector<double> gw(O * K);
                         MatrixMap(gw.data(), eO, eK).noalias() = g * ConstMatrixMap(cols->data(), eK, eP).transpose();
                         accumulate(self, 1, gw);
                       }
                       if (self.inputs.size() > 2 && wants_grad(self, 2)) {
                         std::vector<double> gb(O, 0.0);
                         for (std::size_t o = 0; o < O; ++o)
                           for (std::size_t p = 0; p < P; ++p) gb[o] += self.grad[o * P + p];
                         accumulate(self, 2, gb);
                       }
                     });
}

inline Tensor conv2d(const Tensor& input, const Tensor& weight, std::size_t padding) {
  return conv2d(input, weight, Tensor{}, padding);
}

/// Non-overlapping k×k average pooling of a (C, H, W) tensor; trailing
/// rows/columns that do not fill a window are dropped.
inline Tensor avgpool2d(const Tensor& input, std::size_t k) {
  if (input.rank() != 3 || k == 0 || input.dim(1) < k || input.dim(2) < k) {
    throw ShapeError("avgpool2d: invalid input " + to_string(input.shape()) + " for window " + std::to_string(k));
  }
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t OH = H / k, OW = W / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  std::vector<double> out(C * OH * OW, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < OH * k; ++y)
      for (std::size_t x = 0; x < OW * k; ++x) out[(c * OH + y / k) * OW + x / k] += input[(c * H + y) * W + x] * inv;
  return make_result({C, OH, OW}, std::move(out), {input}, "avgpool2d", [=](Node& self) {
    if (!wants_grad(self, 0)) return;
    std::vector<double> g(C * H * W, 0.0);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < OH * k; ++y)
        for (std::size_t x = 0; x < OW * k; ++x) g[(c * H + y) * W + x] = self.grad[(c * OH + y / k) * OW + x / k] * inv;
    accumulate(self, 0, g);
  });
}

}  // namespace ahgs::ad
