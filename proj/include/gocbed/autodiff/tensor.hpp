#pragma once

// Reverse-mode automatic differentiation over dense row-major double tensors.
//
// A Tensor is a handle to a node in a dynamically recorded computation graph.
// Every op returns a new node that remembers its parents and a closure that
// pushes the node's gradient back into them. Nodes are reference counted, so
// the tape for a rollout batch disappears when the last handle goes away.
// Parameters are leaves that persist across tapes and accumulate gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace gocbed::ad {

using Shape = std::vector<int>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ')';
  return os.str();
}

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int v : s) {
    if (v < 0) throw ShapeError("negative dimension in " + shape_str(s));
    n *= static_cast<std::size_t>(v);
  }
  return n;
}

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

namespace detail {
inline bool& no_grad_flag() {
  thread_local bool flag = false;
  return flag;
}
}  // namespace detail

/// While alive, ops on this thread record no backward closures.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::no_grad_flag()) { detail::no_grad_flag() = true; }
  ~NoGradGuard() { detail::no_grad_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor constant(Shape shape, std::vector<double> values) {
    if (numel(shape) != values.size())
      throw ShapeError("constant: " + std::to_string(values.size()) + " values for shape " +
                       shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Tensor(std::move(n));
  }
  static Tensor zeros(Shape shape) {
    auto n = numel(shape);
    return constant(std::move(shape), std::vector<double>(n, 0.0));
  }
  static Tensor scalar(double v) { return constant({1}, {v}); }
  static Tensor parameter(Shape shape, std::vector<double> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const {
    if (i < 0) i += rank();
    return node_->shape.at(static_cast<std::size_t>(i));
  }
  std::size_t size() const { return node_->value.size(); }
  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }
  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Builds an op result. Backward is recorded only when some parent needs a
/// gradient and no NoGradGuard is active.
inline Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                      std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (n->value.size() != numel(n->shape)) throw ShapeError("make_op: value/shape mismatch");
  bool needs = false;
  if (!detail::no_grad_flag())
    for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    n->requires_grad = true;
    n->is_leaf = false;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.ptr());
    n->backward_fn = std::move(backward);
  }
  return Tensor(std::move(n));
}

/// Reverse accumulation from a scalar loss into every reachable node.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&loss.node(), 0}};
  seen.insert(&loss.node());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  loss.node().ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
}

inline Tensor detach(const Tensor& x) {
  return Tensor::constant(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
}

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {
inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <class F, class D>
Tensor unary(const Tensor& x, F f, D dfdx) {
  std::vector<double> out(x.size());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_op(x.shape(), std::move(out), {x}, [dfdx](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
  });
}
}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      auto& g = p.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      auto& g = p.ensure_grad();
      const double sign = k == 0 ? 1.0 : -1.0;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor shift(const Tensor& x, double c) {
  return detail::unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& x) { return scale(x, -1.0); }

inline Tensor relu(const Tensor& x) {
  return detail::unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

/// log(sigmoid(x)), stable for large |x|.
inline Tensor log_sigmoid(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v >= 0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v)); },
      [](double v, double) {
        // d/dx log sigmoid(x) = sigmoid(-x)
        if (v >= 0) {
          const double e = std::exp(-v);
          return e / (1.0 + e);
        }
        return 1.0 / (1.0 + std::exp(v));
      });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::log(v); },
                       [](double v, double) { return 1.0 / v; });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(x, [](double v) { return v * v; },
                       [](double v, double) { return 2.0 * v; });
}

/// Hard clamp; gradient is zero outside [lo, hi].
inline Tensor clamp(const Tensor& x, double lo, double hi) {
  return detail::unary(x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
                       [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

/// x * s where s holds a single element.
inline Tensor mul_scalar(const Tensor& x, const Tensor& s) {
  if (s.size() != 1) throw ShapeError("mul_scalar: scalar operand has shape " + shape_str(s.shape()));
  const double c = s.item();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * c;
  return make_op(x.shape(), std::move(out), {x, s}, [](Node& self) {
    Node& px = *self.parents[0];
    Node& ps = *self.parents[1];
    const double c = ps.value[0];
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
    }
    if (ps.requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * px.value[i];
      ps.ensure_grad()[0] += acc;
    }
  });
}

/// x + s where s holds a single element.
inline Tensor add_scalar(const Tensor& x, const Tensor& s) {
  if (s.size() != 1) throw ShapeError("add_scalar: scalar operand has shape " + shape_str(s.shape()));
  const double c = s.item();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + c;
  return make_op(x.shape(), std::move(out), {x, s}, [](Node& self) {
    Node& px = *self.parents[0];
    Node& ps = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (ps.requires_grad) {
      double acc = 0.0;
      for (double v : self.grad) acc += v;
      ps.ensure_grad()[0] += acc;
    }
  });
}

/// x + b with b broadcast along the last axis.
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
  const int n = x.dim(-1);
  if (b.rank() != 1 || b.dim(0) != n)
    throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " for input " + shape_str(x.shape()));
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + b[i % n];
  return make_op(x.shape(), std::move(out), {x, b}, [n](Node& self) {
    Node& px = *self.parents[0];
    Node& pb = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_op({1}, {acc}, {x}, [](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

/// Sums over the last axis; a rank-1 input yields shape (1).
inline Tensor sum_last(const Tensor& x) {
  const int n = x.dim(-1);
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  const std::size_t rows = x.size() / static_cast<std::size_t>(n);
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (int j = 0; j < n; ++j) out[r] += x[r * n + j];
  return make_op(std::move(out_shape), std::move(out), {x}, [n](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i / n];
  });
}

/// Max over `axis`; ties route the gradient to the first maximal element.
inline Tensor max_axis(const Tensor& x, int axis) {
  if (axis < 0) axis += x.rank();
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= s[i];
  const int len = s[axis];
  if (len == 0) throw ShapeError("max_axis over empty axis");
  Shape out_shape;
  for (int i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(outer * inner);
  std::vector<std::size_t> arg(outer * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      std::size_t best = o * len * inner + in;
      for (int k = 1; k < len; ++k) {
        const std::size_t idx = (o * len + k) * inner + in;
        if (x[idx] > x[best]) best = idx;
      }
      out[o * inner + in] = x[best];
      arg[o * inner + in] = best;
    }
  return make_op(std::move(out_shape), std::move(out), {x}, [arg = std::move(arg)](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  return make_op(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()), {x},
                 [](Node& self) {
                   auto& g = self.parents[0]->ensure_grad();
                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                 });
}

/// Generic axis permutation: out.shape[i] = in.shape[perm[i]].
inline Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) throw ShapeError("permute: rank mismatch");
  const auto& s = x.shape();
  Shape out_shape(r);
  for (int i = 0; i < r; ++i) out_shape[i] = s[perm[i]];
  std::vector<std::size_t> in_stride(r, 1);
  for (int i = r - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * s[i + 1];
  // map[out_linear] = in_linear
  std::vector<std::size_t> map(x.size());
  std::vector<int> idx(r, 0);
  for (std::size_t o = 0; o < map.size(); ++o) {
    std::size_t in = 0;
    for (int i = 0; i < r; ++i) in += static_cast<std::size_t>(idx[i]) * in_stride[perm[i]];
    map[o] = in;
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < map.size(); ++o) out[o] = x[map[o]];
  return make_op(std::move(out_shape), std::move(out), {x}, [map = std::move(map)](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < map.size(); ++o) g[map[o]] += self.grad[o];
  });
}

inline Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat of nothing");
  const int r = xs[0].rank();
  if (axis < 0) axis += r;
  Shape out_shape = xs[0].shape();
  out_shape[axis] = 0;
  for (const auto& t : xs) {
    if (t.rank() != r) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && t.dim(i) != out_shape[i])
        throw ShapeError("concat: " + shape_str(t.shape()) + " vs " + shape_str(xs[0].shape()));
    out_shape[axis] += t.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[i];
  for (int i = axis + 1; i < r; ++i) inner *= out_shape[i];
  const std::size_t out_row = static_cast<std::size_t>(out_shape[axis]) * inner;
  std::vector<double> out(outer * out_row);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off);
    const std::size_t row = static_cast<std::size_t>(t.dim(axis)) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(t.data().begin() + o * row, row, out.begin() + o * out_row + off);
    off += row;
  }
  return make_op(out_shape, std::move(out), xs, [outer, out_row, offsets](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      auto& g = p.ensure_grad();
      const std::size_t row = g.size() / outer;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < row; ++j) g[o * row + j] += self.grad[o * out_row + offsets[k] + j];
    }
  });
}

inline Tensor slice(const Tensor& x, int axis, int start, int len) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (start < 0 || len < 0 || start + len > x.dim(axis)) throw ShapeError("slice out of range");
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[i];
  for (int i = axis + 1; i < r; ++i) inner *= out_shape[i];
  const std::size_t in_row = static_cast<std::size_t>(x.dim(axis)) * inner;
  const std::size_t row = static_cast<std::size_t>(len) * inner;
  const std::size_t off = static_cast<std::size_t>(start) * inner;
  std::vector<double> out(outer * row);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data().begin() + o * in_row + off, row, out.begin() + o * row);
  return make_op(std::move(out_shape), std::move(out), {x}, [outer, in_row, row, off](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < row; ++j) g[o * in_row + off + j] += self.grad[o * row + j];
  });
}

/// Inserts a new axis at `axis` repeated `count` times.
inline Tensor expand(const Tensor& x, int axis, int count) {
  const int r = x.rank();
  if (axis < 0) axis += r + 1;
  Shape out_shape = x.shape();
  out_shape.insert(out_shape.begin() + axis, count);
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis; i < r; ++i) inner *= x.dim(i);
  std::vector<double> out(outer * count * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (int c = 0; c < count; ++c)
      std::copy_n(x.data().begin() + o * inner, inner, out.begin() + (o * count + c) * inner);
  return make_op(std::move(out_shape), std::move(out), {x}, [outer, inner, count](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (int c = 0; c < count; ++c)
        for (std::size_t j = 0; j < inner; ++j) g[o * inner + j] += self.grad[(o * count + c) * inner + j];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace detail {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;
}  // namespace detail

/// x (..., in) times W (in, out).
inline Tensor matmul(const Tensor& x, const Tensor& w) {
  if (w.rank() != 2 || x.dim(-1) != w.dim(0))
    throw ShapeError("matmul: " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  const int in = w.dim(0), out = w.dim(1);
  const int rows = static_cast<int>(x.size() / in);
  Shape out_shape = x.shape();
  out_shape.back() = out;
  std::vector<double> y(static_cast<std::size_t>(rows) * out);
  detail::Map(y.data(), rows, out).noalias() =
      detail::MapC(x.data().data(), rows, in) * detail::MapC(w.data().data(), in, out);
  return make_op(std::move(out_shape), std::move(y), {x, w}, [rows, in, out](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    detail::MapC gy(self.grad.data(), rows, out);
    if (px.requires_grad)
      detail::Map(px.ensure_grad().data(), rows, in).noalias() +=
          gy * detail::MapC(pw.value.data(), in, out).transpose();
    if (pw.requires_grad)
      detail::Map(pw.ensure_grad().data(), in, out).noalias() +=
          detail::MapC(px.value.data(), rows, in).transpose() * gy;
  });
}

/// Batched matmul a (G, n, k) times b (G, k, m), or b^T when b is (G, m, k).
inline Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0))
    throw ShapeError("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int g = a.dim(0), n = a.dim(1), k = a.dim(2);
  const int m = transpose_b ? b.dim(1) : b.dim(2);
  if ((transpose_b ? b.dim(2) : b.dim(1)) != k)
    throw ShapeError("bmm inner mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> y(static_cast<std::size_t>(g) * n * m);
  for (int i = 0; i < g; ++i) {
    detail::MapC A(a.data().data() + static_cast<std::size_t>(i) * n * k, n, k);
    detail::Map Y(y.data() + static_cast<std::size_t>(i) * n * m, n, m);
    if (transpose_b)
      Y.noalias() = A * detail::MapC(b.data().data() + static_cast<std::size_t>(i) * m * k, m, k).transpose();
    else
      Y.noalias() = A * detail::MapC(b.data().data() + static_cast<std::size_t>(i) * k * m, k, m);
  }
  return make_op({g, n, m}, std::move(y), {a, b}, [g, n, k, m, transpose_b](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (int i = 0; i < g; ++i) {
      detail::MapC GY(self.grad.data() + static_cast<std::size_t>(i) * n * m, n, m);
      detail::MapC A(pa.value.data() + static_cast<std::size_t>(i) * n * k, n, k);
      const double* bp = pb.value.data() + static_cast<std::size_t>(i) * k * m;
      if (transpose_b) {
        detail::MapC B(bp, m, k);
        if (pa.requires_grad)
          detail::Map(pa.ensure_grad().data() + static_cast<std::size_t>(i) * n * k, n, k).noalias() += GY * B;
        if (pb.requires_grad)
          detail::Map(pb.ensure_grad().data() + static_cast<std::size_t>(i) * m * k, m, k).noalias() +=
              GY.transpose() * A;
      } else {
        detail::MapC B(bp, k, m);
        if (pa.requires_grad)
          detail::Map(pa.ensure_grad().data() + static_cast<std::size_t>(i) * n * k, n, k).noalias() +=
              GY * B.transpose();
        if (pb.requires_grad)
          detail::Map(pb.ensure_grad().data() + static_cast<std::size_t>(i) * k * m, k, m).noalias() +=
              A.transpose() * GY;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization and activation over the last axis

inline Tensor softmax_last(const Tensor& x) {
  const int n = x.dim(-1);
  const std::size_t rows = x.size() / n;
  std::vector<double> y(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = x.data().data() + r * n;
    double* yi = y.data() + r * n;
    const double mx = *std::max_element(xi, xi + n);
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += (yi[j] = std::exp(xi[j] - mx));
    for (int j = 0; j < n; ++j) yi[j] /= z;
  }
  return make_op(x.shape(), std::move(y), {x}, [n, rows](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yi = self.value.data() + r * n;
      const double* gy = self.grad.data() + r * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += gy[j] * yi[j];
      for (int j = 0; j < n; ++j) g[r * n + j] += yi[j] * (gy[j] - dot);
    }
  });
}

/// Layer normalization over the last axis with elementwise gain and shift.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift_b, double eps = 1e-5) {
  const int n = x.dim(-1);
  if (gain.size() != static_cast<std::size_t>(n) || shift_b.size() != static_cast<std::size_t>(n))
    throw ShapeError("layer_norm: parameter size mismatch");
  const std::size_t rows = x.size() / n;
  std::vector<double> y(x.size()), xhat(x.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = x.data().data() + r * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += xi[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= n;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < n; ++j) {
      xhat[r * n + j] = (xi[j] - mu) * inv_std[r];
      y[r * n + j] = xhat[r * n + j] * gain[j] + shift_b[j];
    }
  }
  return make_op(x.shape(), std::move(y), {x, gain, shift_b},
                 [n, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                   Node& px = *self.parents[0];
                   Node& pg = *self.parents[1];
                   Node& pb = *self.parents[2];
                   if (pg.requires_grad) {
                     auto& g = pg.ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i] * xhat[i];
                   }
                   if (pb.requires_grad) {
                     auto& g = pb.ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
                   }
                   if (px.requires_grad) {
                     auto& g = px.ensure_grad();
                     std::vector<double> dxhat(n);
                     for (std::size_t r = 0; r < rows; ++r) {
                       double m1 = 0.0, m2 = 0.0;
                       for (int j = 0; j < n; ++j) {
                         dxhat[j] = self.grad[r * n + j] * pg.value[j];
                         m1 += dxhat[j];
                         m2 += dxhat[j] * xhat[r * n + j];
                       }
                       m1 /= n;
                       m2 /= n;
                       for (int j = 0; j < n; ++j)
                         g[r * n + j] += inv_std[r] * (dxhat[j] - m1 - xhat[r * n + j] * m2);
                     }
                   }
                 });
}

/// Divides each last-axis row by its Euclidean norm (floored at eps).
inline Tensor l2_normalize_last(const Tensor& x, double eps = 1e-12) {
  const int n = x.dim(-1);
  const std::size_t rows = x.size() / n;
  std::vector<double> y(x.size()), norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += x[r * n + j] * x[r * n + j];
    norms[r] = std::max(std::sqrt(s), eps);
    for (int j = 0; j < n; ++j) y[r * n + j] = x[r * n + j] / norms[r];
  }
  return make_op(x.shape(), std::move(y), {x}, [n, rows, norms = std::move(norms)](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yi = self.value.data() + r * n;
      const double* gy = self.grad.data() + r * n;
      if (norms[r] <= 1e-12) {
        for (int j = 0; j < n; ++j) g[r * n + j] += gy[j] / norms[r];
        continue;
      }
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += gy[j] * yi[j];
      for (int j = 0; j < n; ++j) g[r * n + j] += (gy[j] - yi[j] * dot) / norms[r];
    }
  });
}

}  // namespace gocbed::ad
