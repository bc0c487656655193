#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace stalab {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

// Raised by any operation whose operand shapes do not satisfy its
// precondition; the message names the offending shapes.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ValueError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Generic scalar readout; instrumentation scalar types overload this.
inline double to_double(float x) { return static_cast<double>(x); }
inline double to_double(double x) { return x; }

// Multiplies that the operation-count convention excludes (normalization
// affine terms, variance accumulation) are routed through this hook so an
// instrumented scalar type can skip them.
inline float uncounted_mul(float a, float b) { return a * b; }
inline double uncounted_mul(double a, double b) { return a * b; }

namespace detail {
inline uint64_t& node_counter() {
  thread_local uint64_t c = 0;
  return c;
}
}  // namespace detail

// One node of the autodiff tape. Nodes are created in topological order
// (every input precedes its consumers); `seq` records the append position
// and the backward pass replays closures in strictly decreasing `seq`,
// visiting each reachable node exactly once.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::function<void()> backward;          // empty for leaves
  std::vector<std::shared_ptr<Node>> inputs;  // keeps the upstream graph alive
  uint64_t seq;

  Node() : seq(detail::node_counter()++) {}
  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  bool is_leaf() const { return !backward; }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return full(shape, T(0), requires_grad);
  }
  static Tensor ones(const Shape& shape, bool requires_grad = false) {
    return full(shape, T(1), requires_grad);
  }
  static Tensor full(const Shape& shape, T value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->shape = shape;
    n->data.assign(static_cast<size_t>(numel_of(shape)), value);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor from_data(const Shape& shape, std::vector<T> data, bool requires_grad = false) {
    if (static_cast<int64_t>(data.size()) != numel_of(shape))
      throw ShapeError("from_data: " + std::to_string(data.size()) +
                       " values do not fill shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = shape;
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor scalar(T v, bool requires_grad = false) { return full({1}, v, requires_grad); }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int64_t dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return n_->numel(); }

  std::vector<T>& data() { return n_->data; }
  const std::vector<T>& data() const { return n_->data; }

  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor has shape " + shape_str(shape()));
    return n_->data[0];
  }

  // Row-major element access, mainly for tests and small setups.
  T at(std::initializer_list<int64_t> idx) const { return n_->data[offset(idx)]; }
  void set(std::initializer_list<int64_t> idx, T v) { n_->data[offset(idx)] = v; }

  bool requires_grad() const { return n_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    n_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return !n_->grad.empty(); }
  const std::vector<T>& grad() const {
    if (n_->grad.empty()) throw ValueError("grad: no gradient accumulated");
    return n_->grad;
  }
  void zero_grad() { n_->grad.assign(n_->data.size(), T(0)); }

  // Reverse-mode sweep from a scalar root. Leaf gradients accumulate across
  // calls; interior gradients are per-sweep.
  void backward() const;

  std::shared_ptr<Node<T>> node() const { return n_; }

 private:
  size_t offset(std::initializer_list<int64_t> idx) const {
    if (idx.size() != n_->shape.size())
      throw ShapeError("index rank " + std::to_string(idx.size()) + " vs shape " +
                       shape_str(n_->shape));
    size_t off = 0;
    size_t k = 0;
    for (int64_t i : idx) {
      off = off * static_cast<size_t>(n_->shape[k]) + static_cast<size_t>(i);
      ++k;
    }
    return off;
  }

  std::shared_ptr<Node<T>> n_;
};

namespace detail {

template <typename T>
Tensor<T> make_op_node(Shape shape, std::vector<T> data,
                       std::vector<std::shared_ptr<Node<T>>> inputs) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  bool rg = false;
  for (auto& in : inputs)
    if (in->requires_grad) rg = true;
  n->requires_grad = rg;
  if (rg) n->inputs = std::move(inputs);
  return Tensor<T>(std::move(n));
}

// b broadcasts over a's leading dims iff b's shape equals a trailing slice
// of a's shape.
inline bool suffix_broadcastable(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  size_t off = a.size() - b.size();
  for (size_t i = 0; i < b.size(); ++i)
    if (a[off + i] != b[i]) return false;
  return true;
}

}  // namespace detail

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1)
    throw ShapeError("backward: root must be scalar, got shape " + shape_str(shape()));

  // Collect the reachable graph, then replay in reverse append order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{n_.get()};
  seen.insert(n_.get());
  while (!stack.empty()) {
    Node<T>* cur = stack.back();
    stack.pop_back();
    order.push_back(cur);
    for (auto& in : cur->inputs)
      if (seen.insert(in.get()).second) stack.push_back(in.get());
  }
  std::sort(order.begin(), order.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });

  // Interior gradients are local to this sweep; only leaves accumulate.
  for (Node<T>* n : order)
    if (!n->is_leaf()) n->grad.assign(n->data.size(), T(0));

  n_->ensure_grad();
  n_->grad[0] = n_->grad[0] + T(1);

  for (Node<T>* n : order)
    if (n->backward) n->backward();
}

// ---------------------------------------------------------------------------
// Elementwise binary ops (equal shapes, or rhs broadcast over leading dims)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T, typename Fwd, typename Bwd>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd,
                           Bwd bwd) {
  if (!suffix_broadcastable(a.shape(), b.shape()))
    throw ShapeError(std::string(name) + ": shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const int64_t na = a.numel(), nb = b.numel();
  std::vector<T> out(static_cast<size_t>(na));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (int64_t i = 0; i < na; ++i) out[static_cast<size_t>(i)] = fwd(pa[i], pb[i % nb]);

  Tensor<T> res = make_op_node<T>(a.shape(), std::move(out), {a.node(), b.node()});
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* an = a.node().get();
    Node<T>* bn = b.node().get();
    self->backward = [self, an, bn, na, nb, bwd]() {
      if (an->requires_grad) an->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      for (int64_t i = 0; i < na; ++i) {
        const size_t ia = static_cast<size_t>(i);
        const size_t ib = static_cast<size_t>(i % nb);
        bwd(self->grad[ia], an->data[ia], bn->data[ib],
            an->requires_grad ? &an->grad[ia] : nullptr,
            bn->requires_grad ? &bn->grad[ib] : nullptr);
      }
    };
  }
  return res;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary(
      a, b, "add", [](T x, T y) { return x + y; },
      [](T g, T, T, T* da, T* db) {
        if (da) *da = *da + g;
        if (db) *db = *db + g;
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary(
      a, b, "sub", [](T x, T y) { return x - y; },
      [](T g, T, T, T* da, T* db) {
        if (da) *da = *da + g;
        if (db) *db = *db - g;
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary(
      a, b, "mul", [](T x, T y) { return x * y; },
      [](T g, T x, T y, T* da, T* db) {
        if (da) *da = *da + g * y;
        if (db) *db = *db + g * x;
      });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary(
      a, b, "div", [](T x, T y) { return x / y; },
      [](T g, T x, T y, T* da, T* db) {
        if (da) *da = *da + g / y;
        if (db) *db = *db - g * x / (y * y);
      });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return sub(a, b);
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, b);
}

// ---------------------------------------------------------------------------
// Scalar ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_op(const Tensor<T>& x, Fwd fwd, Bwd bwd) {
  const int64_t n = x.numel();
  std::vector<T> out(static_cast<size_t>(n));
  const T* px = x.data().data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = fwd(px[i]);
  Tensor<T> res = make_op_node<T>(x.shape(), std::move(out), {x.node()});
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* xn = x.node().get();
    self->backward = [self, xn, n, bwd]() {
      xn->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const size_t k = static_cast<size_t>(i);
        xn->grad[k] = xn->grad[k] + bwd(self->grad[k], xn->data[k], self->data[k]);
      }
    };
  }
  return res;
}

}  // namespace detail

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary_op(
      x, [s](T v) { return v + s; }, [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
  return detail::unary_op(
      x, [s](T v) { return v * s; }, [s](T g, T, T) { return g * s; });
}

// Kept as a true division so that division never masquerades as a multiply
// (the FLOPs instrumentation counts multiplies only).
template <typename T>
Tensor<T> div_scalar(const Tensor<T>& x, T s) {
  return detail::unary_op(
      x, [s](T v) { return v / s; }, [s](T g, T, T) { return g / s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return -v; }, [](T g, T, T) { return -g; });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& x, T s) {
  return add_scalar(x, s);
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& x, T s) {
  return mul_scalar(x, s);
}
template <typename T>
Tensor<T> operator*(T s, const Tensor<T>& x) {
  return mul_scalar(x, s);
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& x) {
  return neg(x);
}

// ---------------------------------------------------------------------------
// Elementwise transcendental ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  using std::exp;
  return detail::unary_op(
      x, [](T v) { using std::exp; return exp(v); },
      [](T g, T, T y) { return g * y; });
}

// log with the argument clamped at `floor` from below; the gradient is zero
// on the clamped region.
template <typename T>
Tensor<T> log_clamped(const Tensor<T>& x, T floor_v) {
  return detail::unary_op(
      x,
      [floor_v](T v) {
        using std::log;
        return log(v < floor_v ? floor_v : v);
      },
      [floor_v](T g, T v, T) { return v < floor_v ? T(0) : g / v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { using std::sqrt; return sqrt(v); },
      [](T g, T, T y) { return g / (T(2) * y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { using std::tanh; return tanh(v); },
      [](T g, T, T y) { return g * (T(1) - y * y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T g, T v, T) { return v > T(0) ? g : T(0); });
}

// GeLU, tanh approximation (bit-exact contract):
//   gelu(x) = 0.5 * x * (1 + tanh( sqrt(2/pi) * (x + 0.044715 * x^3) ))
// with sqrt(2/pi) evaluated in the scalar type.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T c = []() {
    using std::sqrt;
    return sqrt(T(2) / T(3.14159265358979323846));
  }();
  const T a = T(0.044715);
  return detail::unary_op(
      x,
      [c, a](T v) {
        using std::tanh;
        return T(0.5) * v * (T(1) + tanh(c * (v + a * v * v * v)));
      },
      [c, a](T g, T v, T) {
        using std::tanh;
        T t = tanh(c * (v + a * v * v * v));
        T dt = (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
        return g * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
      });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (numel_of(shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor<T> res = detail::make_op_node<T>(shape, x.data(), {x.node()});
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* xn = x.node().get();
    self->backward = [self, xn]() {
      xn->ensure_grad();
      for (size_t i = 0; i < self->grad.size(); ++i) xn->grad[i] = xn->grad[i] + self->grad[i];
    };
  }
  return res;
}

// Swap two axes (materialized copy).
template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis_a, int axis_b) {
  const int r = x.rank();
  if (axis_a < 0 || axis_a >= r || axis_b < 0 || axis_b >= r)
    throw ShapeError("transpose: axes out of range for " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  std::swap(out_shape[static_cast<size_t>(axis_a)], out_shape[static_cast<size_t>(axis_b)]);

  // strides of the input
  std::vector<int64_t> strides(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    strides[static_cast<size_t>(i)] =
        strides[static_cast<size_t>(i + 1)] * x.dim(i + 1);
  std::vector<int64_t> perm_strides(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) perm_strides[static_cast<size_t>(i)] = strides[static_cast<size_t>(i)];
  std::swap(perm_strides[static_cast<size_t>(axis_a)], perm_strides[static_cast<size_t>(axis_b)]);

  const int64_t n = x.numel();
  std::vector<T> out(static_cast<size_t>(n));
  std::vector<int64_t> src_of(static_cast<size_t>(n));
  {
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    for (int64_t o = 0; o < n; ++o) {
      int64_t src = 0;
      for (int i = 0; i < r; ++i) src += idx[static_cast<size_t>(i)] * perm_strides[static_cast<size_t>(i)];
      out[static_cast<size_t>(o)] = x.data()[static_cast<size_t>(src)];
      src_of[static_cast<size_t>(o)] = src;
      for (int i = r - 1; i >= 0; --i) {
        if (++idx[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)]) break;
        idx[static_cast<size_t>(i)] = 0;
      }
    }
  }

  Tensor<T> res = detail::make_op_node<T>(out_shape, std::move(out), {x.node()});
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* xn = x.node().get();
    self->backward = [self, xn, src_of = std::move(src_of)]() {
      xn->ensure_grad();
      for (size_t o = 0; o < self->grad.size(); ++o) {
        const size_t s = static_cast<size_t>(src_of[o]);
        xn->grad[s] = xn->grad[s] + self->grad[o];
      }
    };
  }
  return res;
}

// 2-D matrix transpose shorthand.
template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("transpose2d: expects rank 2, got " + shape_str(x.shape()));
  return transpose(x, 0, 1);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ValueError("concat: no inputs");
  const int r = parts[0].rank();
  if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
  Shape out_shape = parts[0].shape();
  int64_t axis_total = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && p.dim(i) != out_shape[static_cast<size_t>(i)])
        throw ShapeError("concat: shapes " + shape_str(out_shape) + " vs " + shape_str(p.shape()));
    axis_total += p.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = axis_total;

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= out_shape[static_cast<size_t>(i)];

  std::vector<T> out(static_cast<size_t>(numel_of(out_shape)));
  std::vector<std::shared_ptr<Node<T>>> inputs;
  inputs.reserve(parts.size());
  for (const auto& p : parts) inputs.push_back(p.node());

  {
    int64_t axis_off = 0;
    for (const auto& p : parts) {
      const int64_t pa = p.dim(axis);
      const T* src = p.data().data();
      for (int64_t o = 0; o < outer; ++o) {
        T* dst = out.data() + (o * axis_total + axis_off) * inner;
        const T* s = src + o * pa * inner;
        std::copy(s, s + pa * inner, dst);
      }
      axis_off += pa;
    }
  }

  Tensor<T> res = detail::make_op_node<T>(out_shape, std::move(out), std::move(inputs));
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    std::vector<Node<T>*> ins;
    std::vector<int64_t> axis_dims;
    for (const auto& p : parts) {
      ins.push_back(p.node().get());
      axis_dims.push_back(p.dim(axis));
    }
    self->backward = [self, ins, axis_dims, outer, inner, axis_total]() {
      int64_t axis_off = 0;
      for (size_t k = 0; k < ins.size(); ++k) {
        Node<T>* in = ins[k];
        const int64_t pa = axis_dims[k];
        if (in->requires_grad) {
          in->ensure_grad();
          for (int64_t o = 0; o < outer; ++o) {
            const T* g = self->grad.data() + (o * axis_total + axis_off) * inner;
            T* dst = in->grad.data() + o * pa * inner;
            for (int64_t i = 0; i < pa * inner; ++i) dst[i] = dst[i] + g[i];
          }
        }
        axis_off += pa;
      }
    };
  }
  return res;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int64_t start, int64_t len) {
  const int r = x.rank();
  if (axis < 0 || axis >= r) throw ShapeError("slice: axis out of range");
  if (start < 0 || len < 1 || start + len > x.dim(axis))
    throw ShapeError("slice: [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of range for " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = len;

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  const int64_t ax = x.dim(axis);

  std::vector<T> out(static_cast<size_t>(numel_of(out_shape)));
  for (int64_t o = 0; o < outer; ++o) {
    const T* src = x.data().data() + (o * ax + start) * inner;
    std::copy(src, src + len * inner, out.data() + o * len * inner);
  }

  Tensor<T> res = detail::make_op_node<T>(out_shape, std::move(out), {x.node()});
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* xn = x.node().get();
    self->backward = [self, xn, outer, inner, ax, start, len]() {
      xn->ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        T* dst = xn->grad.data() + (o * ax + start) * inner;
        const T* g = self->grad.data() + o * len * inner;
        for (int64_t i = 0; i < len * inner; ++i) dst[i] = dst[i] + g[i];
      }
    };
  }
  return res;
}

// ---------------------------------------------------------------------------
// Reductions (sequential row-major accumulation, deterministic)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc(0);
  for (const T& v : x.data()) acc = acc + v;
  Tensor<T> res = detail::make_op_node<T>({1}, {acc}, {x.node()});
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* xn = x.node().get();
    self->backward = [self, xn]() {
      xn->ensure_grad();
      const T g = self->grad[0];
      for (auto& gv : xn->grad) gv = gv + g;
    };
  }
  return res;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const T n = T(static_cast<double>(x.numel()));
  return div_scalar(sum(x), n);
}

// Reduce one axis away.
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis) {
  const int r = x.rank();
  if (axis < 0 || axis >= r) throw ShapeError("sum_axis: axis out of range");
  Shape out_shape;
  for (int i = 0; i < r; ++i)
    if (i != axis) out_shape.push_back(x.dim(i));
  if (out_shape.empty()) out_shape.push_back(1);

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  const int64_t ax = x.dim(axis);

  std::vector<T> out(static_cast<size_t>(outer * inner), T(0));
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t a = 0; a < ax; ++a) {
      const T* src = x.data().data() + (o * ax + a) * inner;
      T* dst = out.data() + o * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] = dst[i] + src[i];
    }

  Tensor<T> res = detail::make_op_node<T>(out_shape, std::move(out), {x.node()});
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* xn = x.node().get();
    self->backward = [self, xn, outer, inner, ax]() {
      xn->ensure_grad();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t a = 0; a < ax; ++a) {
          T* dst = xn->grad.data() + (o * ax + a) * inner;
          const T* g = self->grad.data() + o * inner;
          for (int64_t i = 0; i < inner; ++i) dst[i] = dst[i] + g[i];
        }
    };
  }
  return res;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(static_cast<size_t>(m * n), T(0));
  {
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t p = 0; p < k; ++p) {
        const T av = pa[i * k + p];
        const T* br = pb + p * n;
        T* orow = out.data() + i * n;
        for (int64_t j = 0; j < n; ++j) orow[j] = orow[j] + av * br[j];
      }
  }
  Tensor<T> res = detail::make_op_node<T>({m, n}, std::move(out), {a.node(), b.node()});
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* an = a.node().get();
    Node<T>* bn = b.node().get();
    self->backward = [self, an, bn, m, k, n]() {
      const T* g = self->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();  // dA = dC * B^T
        const T* pb = bn->data.data();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t p = 0; p < k; ++p) {
            T acc(0);
            const T* gr = g + i * n;
            const T* br = pb + p * n;
            for (int64_t j = 0; j < n; ++j) acc = acc + gr[j] * br[j];
            an->grad[static_cast<size_t>(i * k + p)] =
                an->grad[static_cast<size_t>(i * k + p)] + acc;
          }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();  // dB = A^T * dC
        const T* pa = an->data.data();
        for (int64_t p = 0; p < k; ++p)
          for (int64_t i = 0; i < m; ++i) {
            const T av = pa[i * k + p];
            const T* gr = g + i * n;
            T* brow = bn->grad.data() + p * n;
            for (int64_t j = 0; j < n; ++j) brow[j] = brow[j] + av * gr[j];
          }
      }
    };
  }
  return res;
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

// Softmax along `axis`, max-subtracted for stability. Slices sum to one and
// entries are strictly positive for finite inputs.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const int r = x.rank();
  if (axis < 0 || axis >= r) throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  const int64_t ax = x.dim(axis);

  std::vector<T> out(static_cast<size_t>(x.numel()));
  const T* px = x.data().data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * ax * inner + i;
      T mx = px[base];
      for (int64_t a = 1; a < ax; ++a) {
        const T v = px[base + a * inner];
        if (mx < v) mx = v;
      }
      T denom(0);
      for (int64_t a = 0; a < ax; ++a) {
        using std::exp;
        const T e = exp(px[base + a * inner] - mx);
        out[static_cast<size_t>(base + a * inner)] = e;
        denom = denom + e;
      }
      for (int64_t a = 0; a < ax; ++a) {
        T& v = out[static_cast<size_t>(base + a * inner)];
        v = v / denom;
      }
    }

  Tensor<T> res = detail::make_op_node<T>(x.shape(), std::move(out), {x.node()});
  if (res.requires_grad()) {
    Node<T>* self = res.node().get();
    Node<T>* xn = x.node().get();
    self->backward = [self, xn, outer, inner, ax]() {
      xn->ensure_grad();
      const T* y = self->data.data();
      const T* g = self->grad.data();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
          const int64_t base = o * ax * inner + i;
          T dot(0);
          for (int64_t a = 0; a < ax; ++a) {
            const int64_t k = base + a * inner;
            dot = dot + g[k] * y[k];
          }
          for (int64_t a = 0; a < ax; ++a) {
            const int64_t k = base + a * inner;
            xn->grad[static_cast<size_t>(k)] =
                xn->grad[static_cast<size_t>(k)] + (g[k] - dot) * y[k];
          }
        }
    };
  }
  return res;
}

}  // namespace stalab
