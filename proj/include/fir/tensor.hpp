#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fir/errors.hpp"
#include "fir/flops.hpp"
#include "fir/parallel.hpp"
#include "fir/random.hpp"

namespace fir {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

inline Shape row_major_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    strides[i] = strides[i + 1] * shape[i + 1];
  }
  return strides;
}

namespace detail {

inline bool& grad_mode_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

inline std::uint64_t next_node_seq() {
  thread_local std::uint64_t seq = 0;
  return ++seq;
}

}  // namespace detail

/// Disables graph recording for the enclosing scope (evaluation, oracles).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_enabled()) {
    detail::grad_mode_enabled() = false;
  }
  ~NoGradGuard() { detail::grad_mode_enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  bool requires_grad = false;
  std::vector<T> grad;
  // Monotone creation index; backward visits nodes in decreasing order,
  // i.e. exact reverse execution order.
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  // Receives this node (value + grad ready) and scatters into parents.
  std::function<void(TensorNode<T>&)> backward_fn;

  std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
};

/// Dense row-major tensor handle with optional gradient-tape participation.
/// Copying a Tensor copies the handle, not the storage; values are treated
/// as immutable once the tensor has been consumed by an operation.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return from_data(shape, std::vector<T>(shape_numel(shape), T(0)));
  }

  static Tensor ones(Shape shape) {
    return from_data(shape, std::vector<T>(shape_numel(shape), T(1)));
  }

  static Tensor full(Shape shape, T v) {
    return from_data(shape, std::vector<T>(shape_numel(shape), v));
  }

  static Tensor from_data(Shape shape, std::vector<T> values) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
      throw ShapeError("from_data: shape " + shape_to_string(shape) + " wants " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->seq = detail::next_node_seq();
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  /// Values 0,1,2,... in row-major order (test and oracle helper).
  static Tensor arange(Shape shape) {
    std::vector<T> v(shape_numel(shape));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(i);
    return from_data(std::move(shape), std::move(v));
  }

  static Tensor randn(Shape shape, RandomStream& rng, T stddev = T(1), T mean = T(0)) {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.normal(mean, stddev));
    return from_data(std::move(shape), std::move(v));
  }

  static Tensor rand_uniform(Shape shape, RandomStream& rng, T lo, T hi) {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return from_data(std::move(shape), std::move(v));
  }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t dim(int i) const { return node_->shape[i]; }
  std::int64_t numel() const { return node_->numel(); }

  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }

  T value_at(std::initializer_list<std::int64_t> idx) const {
    const Shape strides = row_major_strides(node_->shape);
    std::int64_t off = 0;
    int i = 0;
    for (auto v : idx) off += v * strides[i++];
    return node_->value[off];
  }

  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }
  bool requires_grad() const { return node_->requires_grad; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const std::vector<T>& grad() const {
    if (node_->grad.empty()) {
      throw UsageError("grad(): no gradient recorded for this tensor");
    }
    return node_->grad;
  }
  std::vector<T>& grad() {
    if (node_->grad.empty()) {
      throw UsageError("grad(): no gradient recorded for this tensor");
    }
    return node_->grad;
  }

  /// Drops any gradient left over from an earlier backward pass.
  void clear_grad() { node_->grad.clear(); }

  /// Value copy detached from any recorded graph.
  Tensor detach() const { return from_data(node_->shape, node_->value); }

  std::shared_ptr<TensorNode<T>> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

namespace detail {

/// Wires a freshly computed result into the tape when grad mode is on and
/// some parent participates in differentiation.
template <typename T>
Tensor<T> make_op_result(Shape shape, std::vector<T> value,
                         std::initializer_list<Tensor<T>> parents,
                         std::function<void(TensorNode<T>&)> backward_fn) {
  Tensor<T> out = Tensor<T>::from_data(std::move(shape), std::move(value));
  if (!grad_mode_enabled()) return out;
  bool needs = false;
  for (const auto& p : parents) {
    if (p.defined() && p.requires_grad()) needs = true;
  }
  if (!needs) return out;
  auto node = out.node();
  node->requires_grad = true;
  for (const auto& p : parents) {
    if (p.defined()) node->parents.push_back(p.node());
  }
  node->backward_fn = std::move(backward_fn);
  return out;
}

template <typename T>
void accumulate(TensorNode<T>& target, const std::vector<T>& contribution) {
  if (!target.requires_grad) return;
  if (target.grad.empty()) target.grad.assign(target.value.size(), T(0));
  for (std::size_t i = 0; i < contribution.size(); ++i) {
    target.grad[i] += contribution[i];
  }
}

}  // namespace detail

/// Reverse-mode accumulation from a scalar loss. Visits every reachable
/// recorded node exactly once, in reverse execution order; a tensor feeding
/// k consumers receives the sum of the k incoming contributions.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward: loss must be a defined scalar tensor, got " +
                     (loss.defined() ? shape_to_string(loss.shape()) : std::string("<undefined>")));
  }
  // Collect the reachable differentiable subgraph.
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  std::unordered_set<const TensorNode<T>*> seen;
  std::vector<std::shared_ptr<TensorNode<T>>> stack{loss.node()};
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    if (!n->requires_grad || seen.count(n.get())) continue;
    seen.insert(n.get());
    nodes.push_back(n);
    for (auto& p : n->parents) stack.push_back(p);
  }
  // Fresh gradient buffers for this pass.
  for (auto& n : nodes) n->grad.assign(n->value.size(), T(0));
  std::sort(nodes.begin(), nodes.end(),
            [](const auto& a, const auto& b) { return a->seq > b->seq; });
  loss.node()->grad[0] = T(1);
  for (auto& n : nodes) {
    if (n->backward_fn) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}
}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  count_elementwise_flops(static_cast<std::int64_t>(out.size()));
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op_result<T>(a.shape(), std::move(out), {a, b},
                                   [an, bn](TensorNode<T>& self) {
                                     detail::accumulate(*an, self.grad);
                                     detail::accumulate(*bn, self.grad);
                                   });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  count_elementwise_flops(static_cast<std::int64_t>(out.size()));
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op_result<T>(a.shape(), std::move(out), {a, b},
                                   [an, bn](TensorNode<T>& self) {
                                     detail::accumulate(*an, self.grad);
                                     if (bn->requires_grad) {
                                       std::vector<T> neg(self.grad.size());
                                       for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -self.grad[i];
                                       detail::accumulate(*bn, neg);
                                     }
                                   });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  count_elementwise_flops(static_cast<std::int64_t>(out.size()));
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op_result<T>(
      a.shape(), std::move(out), {a, b}, [an, bn](TensorNode<T>& self) {
        if (an->requires_grad) {
          std::vector<T> ga(self.grad.size());
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = self.grad[i] * bn->value[i];
          detail::accumulate(*an, ga);
        }
        if (bn->requires_grad) {
          std::vector<T> gb(self.grad.size());
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = self.grad[i] * an->value[i];
          detail::accumulate(*bn, gb);
        }
      });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "div");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  count_elementwise_flops(static_cast<std::int64_t>(out.size()));
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op_result<T>(
      a.shape(), std::move(out), {a, b}, [an, bn](TensorNode<T>& self) {
        if (an->requires_grad) {
          std::vector<T> ga(self.grad.size());
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = self.grad[i] / bn->value[i];
          detail::accumulate(*an, ga);
        }
        if (bn->requires_grad) {
          std::vector<T> gb(self.grad.size());
          for (std::size_t i = 0; i < gb.size(); ++i) {
            gb[i] = -self.grad[i] * an->value[i] / (bn->value[i] * bn->value[i]);
          }
          detail::accumulate(*bn, gb);
        }
      });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = -av[i];
  count_elementwise_flops(static_cast<std::int64_t>(out.size()));
  auto an = a.node();
  return detail::make_op_result<T>(a.shape(), std::move(out), {a},
                                   [an](TensorNode<T>& self) {
                                     std::vector<T> g(self.grad.size());
                                     for (std::size_t i = 0; i < g.size(); ++i) g[i] = -self.grad[i];
                                     detail::accumulate(*an, g);
                                   });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  count_elementwise_flops(static_cast<std::int64_t>(out.size()));
  auto an = a.node();
  return detail::make_op_result<T>(a.shape(), std::move(out), {a},
                                   [an, c](TensorNode<T>& self) {
                                     std::vector<T> g(self.grad.size());
                                     for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * c;
                                     detail::accumulate(*an, g);
                                   });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
  count_elementwise_flops(static_cast<std::int64_t>(out.size()));
  auto an = a.node();
  return detail::make_op_result<T>(
      a.shape(), std::move(out), {a}, [an](TensorNode<T>& self) {
        std::vector<T> g(self.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * self.value[i];
        detail::accumulate(*an, g);
      });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(av[i]);
  count_elementwise_flops(static_cast<std::int64_t>(out.size()));
  auto an = a.node();
  return detail::make_op_result<T>(
      a.shape(), std::move(out), {a}, [an](TensorNode<T>& self) {
        std::vector<T> g(self.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] = self.grad[i] / (T(2) * self.value[i]);
        }
        detail::accumulate(*an, g);
      });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(av[i]);
  count_elementwise_flops(static_cast<std::int64_t>(out.size()));
  auto an = a.node();
  return detail::make_op_result<T>(
      a.shape(), std::move(out), {a}, [an](TensorNode<T>& self) {
        std::vector<T> g(self.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T x = an->value[i];
          g[i] = x > T(0) ? self.grad[i] : (x < T(0) ? -self.grad[i] : T(0));
        }
        detail::accumulate(*an, g);
      });
}

/// min(x, cap); subgradient 0 on the clamped side.
template <typename T>
Tensor<T> clamp_max(const Tensor<T>& a, T cap) {
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(av[i], cap);
  count_elementwise_flops(static_cast<std::int64_t>(out.size()));
  auto an = a.node();
  return detail::make_op_result<T>(
      a.shape(), std::move(out), {a}, [an, cap](TensorNode<T>& self) {
        std::vector<T> g(self.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] = an->value[i] < cap ? self.grad[i] : T(0);
        }
        detail::accumulate(*an, g);
      });
}

/// GELU, tanh approximation.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T kC = T(0.7978845608028653559);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = av[i];
    out[i] = T(0.5) * x * (T(1) + std::tanh(kC * (x + kA * x * x * x)));
  }
  count_activation_flops(static_cast<std::int64_t>(out.size()) * flop_cost::kGeluPerElem);
  auto an = a.node();
  return detail::make_op_result<T>(
      a.shape(), std::move(out), {a}, [an](TensorNode<T>& self) {
        std::vector<T> g(self.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T x = an->value[i];
          const T u = kC * (x + kA * x * x * x);
          const T t = std::tanh(u);
          const T du = kC * (T(1) + T(3) * kA * x * x);
          g[i] = self.grad[i] * (T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du);
        }
        detail::accumulate(*an, g);
      });
}

/// y[..., j] = x[..., j] + b[j] (bias broadcast over the last dim).
template <typename T>
Tensor<T> add_rowbias(const Tensor<T>& x, const Tensor<T>& b) {
  if (b.ndim() != 1 || b.dim(0) != x.shape().back()) {
    throw ShapeError("add_rowbias: bias " + shape_to_string(b.shape()) +
                     " does not match last dim of " + shape_to_string(x.shape()));
  }
  const std::int64_t n = x.shape().back();
  const std::int64_t rows = x.numel() / n;
  const auto& xv = x.values();
  const auto& bv = b.values();
  std::vector<T> out(xv.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t j = 0; j < n; ++j) out[r * n + j] = xv[r * n + j] + bv[j];
  }
  count_elementwise_flops(x.numel());
  auto xn = x.node();
  auto bn = b.node();
  return detail::make_op_result<T>(
      x.shape(), std::move(out), {x, b}, [xn, bn, rows, n](TensorNode<T>& self) {
        detail::accumulate(*xn, self.grad);
        if (bn->requires_grad) {
          std::vector<T> gb(n, T(0));
          for (std::int64_t r = 0; r < rows; ++r) {
            for (std::int64_t j = 0; j < n; ++j) gb[j] += self.grad[r * n + j];
          }
          detail::accumulate(*bn, gb);
        }
      });
}

/// y = x * v[index along `axis`], broadcasting the vector v over every other
/// axis (used for per-head attention temperatures).
template <typename T>
Tensor<T> scale_axis(const Tensor<T>& x, const Tensor<T>& v, int axis) {
  if (axis < 0 || axis >= x.ndim()) {
    throw ShapeError("scale_axis: axis " + std::to_string(axis) + " out of range for " +
                     shape_to_string(x.shape()));
  }
  if (v.ndim() != 1 || v.dim(0) != x.dim(axis)) {
    throw ShapeError("scale_axis: vector " + shape_to_string(v.shape()) +
                     " does not match axis " + std::to_string(axis) + " of " +
                     shape_to_string(x.shape()));
  }
  const Shape strides = row_major_strides(x.shape());
  const std::int64_t axis_stride = strides[axis];
  const std::int64_t axis_len = x.dim(axis);
  const auto& xv = x.values();
  const auto& vv = v.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::int64_t a = (static_cast<std::int64_t>(i) / axis_stride) % axis_len;
    out[i] = xv[i] * vv[a];
  }
  count_elementwise_flops(x.numel());
  auto xn = x.node();
  auto vn = v.node();
  return detail::make_op_result<T>(
      x.shape(), std::move(out), {x, v},
      [xn, vn, axis_stride, axis_len](TensorNode<T>& self) {
        if (xn->requires_grad) {
          std::vector<T> gx(self.grad.size());
          for (std::size_t i = 0; i < gx.size(); ++i) {
            const std::int64_t a = (static_cast<std::int64_t>(i) / axis_stride) % axis_len;
            gx[i] = self.grad[i] * vn->value[a];
          }
          detail::accumulate(*xn, gx);
        }
        if (vn->requires_grad) {
          std::vector<T> gv(axis_len, T(0));
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const std::int64_t a = (static_cast<std::int64_t>(i) / axis_stride) % axis_len;
            gv[a] += self.grad[i] * xn->value[i];
          }
          detail::accumulate(*vn, gv);
        }
      });
}

// ---------------------------------------------------------------------------
// Structural operations (bijective data movement; zero FLOPs)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                     shape_to_string(new_shape));
  }
  auto xn = x.node();
  return detail::make_op_result<T>(std::move(new_shape), x.values(), {x},
                                   [xn](TensorNode<T>& self) {
                                     detail::accumulate(*xn, self.grad);
                                   });
}

namespace detail {
template <typename T>
std::vector<T> permute_values(const std::vector<T>& src, const Shape& shape,
                              const std::vector<int>& axes, Shape& out_shape) {
  const int nd = static_cast<int>(shape.size());
  out_shape.resize(nd);
  for (int i = 0; i < nd; ++i) out_shape[i] = shape[axes[i]];
  const Shape src_strides = row_major_strides(shape);
  const Shape dst_strides = row_major_strides(out_shape);
  std::vector<T> dst(src.size());
  const std::int64_t n = static_cast<std::int64_t>(src.size());
  std::vector<std::int64_t> perm_src_stride(nd);
  for (int i = 0; i < nd; ++i) perm_src_stride[i] = src_strides[axes[i]];
  for (std::int64_t di = 0; di < n; ++di) {
    std::int64_t rem = di;
    std::int64_t si = 0;
    for (int k = 0; k < nd; ++k) {
      const std::int64_t c = rem / dst_strides[k];
      rem -= c * dst_strides[k];
      si += c * perm_src_stride[k];
    }
    dst[di] = src[si];
  }
  return dst;
}
}  // namespace detail

/// Reorders axes: output axis i is input axis axes[i].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::vector<int> axes) {
  const int nd = x.ndim();
  if (static_cast<int>(axes.size()) != nd) {
    throw ShapeError("permute: axes count " + std::to_string(axes.size()) +
                     " != rank of " + shape_to_string(x.shape()));
  }
  std::vector<bool> used(nd, false);
  for (int a : axes) {
    if (a < 0 || a >= nd || used[a]) {
      throw ShapeError("permute: axes are not a permutation of 0.." + std::to_string(nd - 1));
    }
    used[a] = true;
  }
  Shape out_shape;
  std::vector<T> out = detail::permute_values(x.values(), x.shape(), axes, out_shape);
  std::vector<int> inverse(nd);
  for (int i = 0; i < nd; ++i) inverse[axes[i]] = i;
  auto xn = x.node();
  return detail::make_op_result<T>(
      std::move(out_shape), std::move(out), {x},
      [xn, inverse](TensorNode<T>& self) {
        if (!xn->requires_grad) return;
        Shape back_shape;
        std::vector<T> g = detail::permute_values(self.grad, self.shape, inverse, back_shape);
        detail::accumulate(*xn, g);
      });
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  std::vector<int> axes(x.ndim());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[x.ndim() - 2], axes[x.ndim() - 1]);
  return permute(x, axes);
}

/// Concatenates along the last axis.
template <typename T>
Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != b.ndim()) {
    throw ShapeError("concat_last: rank mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  for (int i = 0; i + 1 < a.ndim(); ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw ShapeError("concat_last: leading dims differ " + shape_to_string(a.shape()) +
                       " vs " + shape_to_string(b.shape()));
    }
  }
  const std::int64_t ca = a.shape().back();
  const std::int64_t cb = b.shape().back();
  const std::int64_t rows = a.numel() / ca;
  Shape out_shape = a.shape();
  out_shape.back() = ca + cb;
  std::vector<T> out(rows * (ca + cb));
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy_n(av.begin() + r * ca, ca, out.begin() + r * (ca + cb));
    std::copy_n(bv.begin() + r * cb, cb, out.begin() + r * (ca + cb) + ca);
  }
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op_result<T>(
      std::move(out_shape), std::move(out), {a, b},
      [an, bn, rows, ca, cb](TensorNode<T>& self) {
        if (an->requires_grad) {
          std::vector<T> ga(rows * ca);
          for (std::int64_t r = 0; r < rows; ++r) {
            std::copy_n(self.grad.begin() + r * (ca + cb), ca, ga.begin() + r * ca);
          }
          detail::accumulate(*an, ga);
        }
        if (bn->requires_grad) {
          std::vector<T> gb(rows * cb);
          for (std::int64_t r = 0; r < rows; ++r) {
            std::copy_n(self.grad.begin() + r * (ca + cb) + ca, cb, gb.begin() + r * cb);
          }
          detail::accumulate(*bn, gb);
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.values()) s += v;
  count_elementwise_flops(x.numel());
  auto xn = x.node();
  return detail::make_op_result<T>(Shape{1}, std::vector<T>{s}, {x},
                                   [xn](TensorNode<T>& self) {
                                     std::vector<T> g(xn->value.size(), self.grad[0]);
                                     detail::accumulate(*xn, g);
                                   });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  const T inv = T(1) / static_cast<T>(x.numel());
  T s = T(0);
  for (T v : x.values()) s += v;
  count_elementwise_flops(x.numel() + 1);
  auto xn = x.node();
  return detail::make_op_result<T>(Shape{1}, std::vector<T>{s * inv}, {x},
                                   [xn, inv](TensorNode<T>& self) {
                                     std::vector<T> g(xn->value.size(), self.grad[0] * inv);
                                     detail::accumulate(*xn, g);
                                   });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
void check_matmul_batch(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.ndim() < 2 || b.ndim() < 2 || a.ndim() != b.ndim()) {
    throw ShapeError(std::string(op) + ": need equal-rank tensors of rank >= 2, got " +
                     shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
  for (int i = 0; i + 2 < a.ndim(); ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw ShapeError(std::string(op) + ": batch dims differ, " + shape_to_string(a.shape()) +
                       " vs " + shape_to_string(b.shape()));
    }
  }
}

// C[m,n] += A[m,k] * B[k,n], row-major, saxpy inner loop.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const T av = ai[kk];
      const T* bk = b + kk * n;
      for (std::int64_t j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T, dot-product inner loop over contiguous rows.
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T acc = T(0);
      for (std::int64_t kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
      ci[j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n].
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    const T* bi = b + i * n;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const T av = ai[kk];
      T* ck = c + kk * n;
      for (std::int64_t j = 0; j < n; ++j) ck[j] += av * bi[j];
    }
  }
}
}  // namespace detail

/// Batched matrix product: a[..., m, k] x b[..., k, n] -> [..., m, n].
/// Leading batch dimensions must match exactly.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_matmul_batch(a, b, "matmul");
  const int nd = a.ndim();
  const std::int64_t m = a.dim(nd - 2);
  const std::int64_t k = a.dim(nd - 1);
  const std::int64_t k2 = b.dim(nd - 2);
  const std::int64_t n = b.dim(nd - 1);
  if (k != k2) {
    throw ShapeError("matmul: inner dims disagree, " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  const std::int64_t batch = a.numel() / (m * k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(batch * m * n, T(0));
  const T* av = a.values().data();
  const T* bv = b.values().data();
  T* ov = out.data();
  parallel_for(batch, [&](std::int64_t g) {
    detail::gemm_nn(av + g * m * k, bv + g * k * n, ov + g * m * n, m, k, n);
  });
  count_matmul_flops(flop_cost::kMac * batch * m * k * n);
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op_result<T>(
      std::move(out_shape), std::move(out), {a, b},
      [an, bn, batch, m, k, n](TensorNode<T>& self) {
        if (an->requires_grad) {
          std::vector<T> ga(an->value.size(), T(0));
          for (std::int64_t g = 0; g < batch; ++g) {
            // dA = dC * B^T
            detail::gemm_nt(self.grad.data() + g * m * n, bn->value.data() + g * k * n,
                            ga.data() + g * m * k, m, n, k);
          }
          detail::accumulate(*an, ga);
        }
        if (bn->requires_grad) {
          std::vector<T> gb(bn->value.size(), T(0));
          for (std::int64_t g = 0; g < batch; ++g) {
            // dB = A^T * dC
            detail::gemm_tn(an->value.data() + g * m * k, self.grad.data() + g * m * n,
                            gb.data() + g * k * n, m, k, n);
          }
          detail::accumulate(*bn, gb);
        }
      });
}

/// Batched product against a transposed right operand:
/// a[..., m, k] x b[..., n, k]^T -> [..., m, n]. Keeps attention score
/// computation on contiguous rows.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_matmul_batch(a, b, "matmul_nt");
  const int nd = a.ndim();
  const std::int64_t m = a.dim(nd - 2);
  const std::int64_t k = a.dim(nd - 1);
  const std::int64_t n = b.dim(nd - 2);
  if (k != b.dim(nd - 1)) {
    throw ShapeError("matmul_nt: inner dims disagree, " + shape_to_string(a.shape()) +
                     " x " + shape_to_string(b.shape()) + "^T");
  }
  const std::int64_t batch = a.numel() / (m * k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(batch * m * n, T(0));
  const T* av = a.values().data();
  const T* bv = b.values().data();
  T* ov = out.data();
  parallel_for(batch, [&](std::int64_t g) {
    detail::gemm_nt(av + g * m * k, bv + g * n * k, ov + g * m * n, m, k, n);
  });
  count_matmul_flops(flop_cost::kMac * batch * m * k * n);
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op_result<T>(
      std::move(out_shape), std::move(out), {a, b},
      [an, bn, batch, m, k, n](TensorNode<T>& self) {
        if (an->requires_grad) {
          std::vector<T> ga(an->value.size(), T(0));
          for (std::int64_t g = 0; g < batch; ++g) {
            // dA = dC * B
            detail::gemm_nn(self.grad.data() + g * m * n, bn->value.data() + g * n * k,
                            ga.data() + g * m * k, m, n, k);
          }
          detail::accumulate(*an, ga);
        }
        if (bn->requires_grad) {
          std::vector<T> gb(bn->value.size(), T(0));
          for (std::int64_t g = 0; g < batch; ++g) {
            // dB = dC^T * A
            detail::gemm_tn(self.grad.data() + g * m * n, an->value.data() + g * m * k,
                            gb.data() + g * n * k, m, n, k);
          }
          detail::accumulate(*bn, gb);
        }
      });
}

// ---------------------------------------------------------------------------
// Normalizations
// ---------------------------------------------------------------------------

/// Numerically stable softmax over the last dimension (max subtraction).
template <typename T>
Tensor<T> softmax_last(const Tensor<T>& x) {
  const std::int64_t n = x.shape().back();
  const std::int64_t rows = x.numel() / n;
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * n;
    T* orow = out.data() + r * n;
    T mx = row[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (std::int64_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    const T inv = T(1) / sum;
    for (std::int64_t j = 0; j < n; ++j) orow[j] *= inv;
  }
  count_softmax_flops(x.numel() * flop_cost::kSoftmaxPerElem);
  auto xn = x.node();
  return detail::make_op_result<T>(
      x.shape(), std::move(out), {x}, [xn, rows, n](TensorNode<T>& self) {
        if (!xn->requires_grad) return;
        std::vector<T> g(self.grad.size());
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* y = self.value.data() + r * n;
          const T* gy = self.grad.data() + r * n;
          T dot = T(0);
          for (std::int64_t j = 0; j < n; ++j) dot += gy[j] * y[j];
          for (std::int64_t j = 0; j < n; ++j) g[r * n + j] = (gy[j] - dot) * y[j];
        }
        detail::accumulate(*xn, g);
      });
}

/// Layer normalization over the last dimension with affine parameters.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-6)) {
  const std::int64_t n = x.shape().back();
  if (gain.ndim() != 1 || gain.dim(0) != n || bias.ndim() != 1 || bias.dim(0) != n) {
    throw ShapeError("layer_norm: affine params " + shape_to_string(gain.shape()) + "/" +
                     shape_to_string(bias.shape()) + " do not match last dim of " +
                     shape_to_string(x.shape()));
  }
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
  const std::int64_t rows = x.numel() / n;
  const auto& xv = x.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  std::vector<T> out(xv.size());
  std::vector<T> inv_std(rows);
  std::vector<T> means(rows);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * n;
    T mean = T(0);
    for (std::int64_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<T>(n);
    T var = T(0);
    for (std::int64_t j = 0; j < n; ++j) {
      const T d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + eps);
    means[r] = mean;
    inv_std[r] = is;
    T* orow = out.data() + r * n;
    for (std::int64_t j = 0; j < n; ++j) {
      orow[j] = (row[j] - mean) * is * gv[j] + bv[j];
    }
  }
  count_layer_norm_flops(x.numel() * flop_cost::kLayerNormPerElem +
                         rows * flop_cost::kLayerNormPerSlice);
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  return detail::make_op_result<T>(
      x.shape(), std::move(out), {x, gain, bias},
      [xn, gn, bn, rows, n, means, inv_std](TensorNode<T>& self) {
        std::vector<T> gx(xn->requires_grad ? xn->value.size() : 0);
        std::vector<T> gg(n, T(0));
        std::vector<T> gb(n, T(0));
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* row = xn->value.data() + r * n;
          const T* gy = self.grad.data() + r * n;
          const T mean = means[r];
          const T is = inv_std[r];
          // dxhat and the two row reductions shared by the input gradient.
          T sum_dxhat = T(0);
          T sum_dxhat_xhat = T(0);
          for (std::int64_t j = 0; j < n; ++j) {
            const T xhat = (row[j] - mean) * is;
            const T dxhat = gy[j] * gn->value[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            gg[j] += gy[j] * xhat;
            gb[j] += gy[j];
          }
          if (!gx.empty()) {
            const T invn = T(1) / static_cast<T>(n);
            for (std::int64_t j = 0; j < n; ++j) {
              const T xhat = (row[j] - mean) * is;
              const T dxhat = gy[j] * gn->value[j];
              gx[r * n + j] = is * (dxhat - invn * sum_dxhat - xhat * invn * sum_dxhat_xhat);
            }
          }
        }
        if (xn->requires_grad) detail::accumulate(*xn, gx);
        if (gn->requires_grad) detail::accumulate(*gn, gg);
        if (bn->requires_grad) detail::accumulate(*bn, gb);
      });
}

/// Rows of the last dimension scaled to unit L2 norm. A tiny floor keeps the
/// operation total on finite input; genuinely zero rows map to zero.
template <typename T>
Tensor<T> l2_normalize_last(const Tensor<T>& x) {
  constexpr T kEps2 = T(1e-24);
  const std::int64_t n = x.shape().back();
  const std::int64_t rows = x.numel() / n;
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  std::vector<T> inv_norm(rows);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * n;
    T ss = T(0);
    for (std::int64_t j = 0; j < n; ++j) ss += row[j] * row[j];
    const T inv = T(1) / std::sqrt(ss + kEps2);
    inv_norm[r] = inv;
    for (std::int64_t j = 0; j < n; ++j) out[r * n + j] = row[j] * inv;
  }
  count_elementwise_flops(x.numel() * flop_cost::kNormalizePerElem + rows * 2);
  auto xn = x.node();
  return detail::make_op_result<T>(
      x.shape(), std::move(out), {x}, [xn, rows, n, inv_norm](TensorNode<T>& self) {
        if (!xn->requires_grad) return;
        std::vector<T> gx(self.grad.size());
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* y = self.value.data() + r * n;
          const T* gy = self.grad.data() + r * n;
          T dot = T(0);
          for (std::int64_t j = 0; j < n; ++j) dot += gy[j] * y[j];
          for (std::int64_t j = 0; j < n; ++j) {
            gx[r * n + j] = (gy[j] - y[j] * dot) * inv_norm[r];
          }
        }
        detail::accumulate(*xn, gx);
      });
}

}  // namespace fir
