#include "tflab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <unordered_set>

#include "tflab/error.hpp"
#include "tflab/random.hpp"

namespace tflab {

namespace detail {

struct Node {
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const std::vector<double>&)> backward;
  bool consumed = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::shared_ptr<Node> node;
};

}  // namespace detail

using detail::Node;
using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

namespace {

thread_local std::uint64_t t_next_seq = 0;
thread_local bool t_grad_enabled = true;

ImplPtr new_impl(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

std::vector<double>& grad_buf(TensorImpl& t) {
  if (!t.has_grad) {
    t.grad.assign(t.data.size(), 0.0);
    t.has_grad = true;
  }
  return t.grad;
}

using BackwardFn = std::function<void(const std::vector<double>&)>;

// Wraps a computed value as an op output, recording a node when any input
// participates in differentiation.
Tensor make_op(Shape shape, std::vector<double> data,
               std::vector<ImplPtr> inputs, BackwardFn fn) {
  auto out = new_impl(std::move(shape), std::move(data));
  bool needs = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in->requires_grad;
  }
  if (needs) {
    out->requires_grad = true;
    auto node = std::make_shared<Node>();
    node->seq = ++t_next_seq;
    node->inputs = std::move(inputs);
    node->backward = std::move(fn);
    out->node = std::move(node);
  }
  return Tensor(out);
}

const ImplPtr& checked(const Tensor& t, const char* op) {
  if (!t.defined()) fail(ErrorKind::dimension, std::string(op) + ": undefined tensor");
  return t.impl();
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    fail(ErrorKind::dimension, std::string(op) + ": expected a matrix, got shape " +
                                   shape_str(t.shape()));
  }
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t total_numel(const NamedTensors& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

// ----------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  auto impl = new_impl(std::move(shape), std::vector<double>(n, value));
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    fail(ErrorKind::dimension, "from_data: shape " + shape_str(shape) + " needs " +
                                   std::to_string(shape_numel(shape)) + " values, got " +
                                   std::to_string(values.size()));
  }
  auto impl = new_impl(std::move(shape), std::move(values));
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

Tensor Tensor::identity(std::size_t n, bool requires_grad) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return from_data({n, n}, std::move(v), requires_grad);
}

const Shape& Tensor::shape() const { return checked(*this, "shape")->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    fail(ErrorKind::dimension, "dim: axis " + std::to_string(axis) + " out of range for " +
                                   shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(*this, "numel")->data.size(); }

std::span<const double> Tensor::data() const { return checked(*this, "data")->data; }

std::span<double> Tensor::mutable_data() {
  const auto& impl = checked(*this, "mutable_data");
  if (impl->node) fail(ErrorKind::state, "mutable_data: tensor is an op output");
  return impl->data;
}

std::vector<double> Tensor::values() const {
  auto d = data();
  return {d.begin(), d.end()};
}

double Tensor::item() const {
  if (numel() != 1) {
    fail(ErrorKind::dimension, "item: tensor of shape " + shape_str(shape()) +
                                   " is not a scalar");
  }
  return impl_->data[0];
}

double Tensor::at(std::size_t i) const { return data()[i]; }

double Tensor::at(std::size_t i, std::size_t j) const {
  return data()[i * last_dim(shape()) + j];
}

bool Tensor::requires_grad() const { return checked(*this, "requires_grad")->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  const auto& impl = checked(*this, "set_requires_grad");
  if (impl->node) fail(ErrorKind::state, "set_requires_grad: only leaves can be toggled");
  impl->requires_grad = on;
  if (!on) clear_grad();
}

bool Tensor::is_leaf() const { return checked(*this, "is_leaf")->node == nullptr; }

bool Tensor::has_grad() const { return checked(*this, "has_grad")->has_grad; }

std::span<const double> Tensor::grad() const {
  const auto& impl = checked(*this, "grad");
  if (!impl->has_grad) return {};
  return impl->grad;
}

std::vector<double> Tensor::grad_values() const {
  const auto& impl = checked(*this, "grad_values");
  if (!impl->has_grad) return std::vector<double>(impl->data.size(), 0.0);
  return impl->grad;
}

void Tensor::zero_grad() {
  const auto& impl = checked(*this, "zero_grad");
  if (impl->has_grad) std::fill(impl->grad.begin(), impl->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  const auto& impl = checked(*this, "clear_grad");
  impl->grad.clear();
  impl->has_grad = false;
}

void Tensor::backward() const {
  const auto& root = checked(*this, "backward");
  if (root->data.size() != 1) {
    fail(ErrorKind::dimension, "backward: loss must be scalar, got shape " +
                                   shape_str(root->shape));
  }
  if (!root->requires_grad) return;

  std::vector<ImplPtr> order;
  std::unordered_set<const TensorImpl*> seen{root.get()};
  std::vector<ImplPtr> stack{root};
  while (!stack.empty()) {
    ImplPtr t = std::move(stack.back());
    stack.pop_back();
    if (!t->node) continue;
    if (t->node->consumed) {
      fail(ErrorKind::state, "backward: graph already consumed by an earlier backward()");
    }
    for (const auto& in : t->node->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in);
    }
    order.push_back(std::move(t));
  }
  std::sort(order.begin(), order.end(), [](const ImplPtr& a, const ImplPtr& b) {
    return a->node->seq > b->node->seq;
  });

  grad_buf(*root)[0] += 1.0;
  for (const auto& t : order) {
    if (t->has_grad) t->node->backward(t->grad);
  }
  for (const auto& t : order) {
    t->node->consumed = true;
    t->node->backward = nullptr;
    t->node->inputs.clear();
  }
}

Tensor Tensor::detach() const {
  const auto& impl = checked(*this, "detach");
  return Tensor(new_impl(impl->shape, impl->data));
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

// ----------------------------------------------------------------------------
// BinaryMatrix

BinaryMatrix::BinaryMatrix(std::size_t rows, std::size_t cols, bool fill)
    : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

std::size_t BinaryMatrix::row_count(std::size_t r) const {
  std::size_t n = 0;
  for (std::size_t c = 0; c < cols_; ++c) n += bits_[r * cols_ + c];
  return n;
}

std::size_t BinaryMatrix::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

// ----------------------------------------------------------------------------
// Pointwise ops

namespace {

enum class Broadcast { none, scalar_rhs };

Broadcast check_binary(const Tensor& a, const Tensor& b, const char* op) {
  checked(a, op);
  checked(b, op);
  if (a.shape() == b.shape()) return Broadcast::none;
  if (b.numel() == 1) return Broadcast::scalar_rhs;
  fail(ErrorKind::dimension, std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                 " vs " + shape_str(b.shape()));
}

template <typename Fwd, typename DA, typename DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da,
                 DB db) {
  const Broadcast bc = check_binary(a, b, name);
  const auto& ai = a.impl();
  const auto& bi = b.impl();
  const std::size_t n = ai->data.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double bv = bc == Broadcast::none ? bi->data[i] : bi->data[0];
    out[i] = fwd(ai->data[i], bv);
  }
  TensorImpl* ap = ai.get();
  TensorImpl* bp = bi.get();
  return make_op(ai->shape, std::move(out), {ai, bi},
                 [ap, bp, bc, n, da, db](const std::vector<double>& g) {
                   auto bval = [&](std::size_t i) {
                     return bc == Broadcast::none ? bp->data[i] : bp->data[0];
                   };
                   if (ap->requires_grad) {
                     auto& ga = grad_buf(*ap);
                     for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * da(ap->data[i], bval(i));
                   }
                   if (bp->requires_grad) {
                     auto& gb = grad_buf(*bp);
                     for (std::size_t i = 0; i < n; ++i) {
                       gb[bc == Broadcast::none ? i : 0] += g[i] * db(ap->data[i], bval(i));
                     }
                   }
                 });
}

template <typename Fwd, typename Deriv>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Deriv deriv) {
  const auto& ai = checked(a, name);
  const std::size_t n = ai->data.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ai->data[i]);
  TensorImpl* ap = ai.get();
  return make_op(ai->shape, std::move(out), {ai},
                 [ap, n, deriv](const std::vector<double>& g) {
                   if (!ap->requires_grad) return;
                   auto& ga = grad_buf(*ap);
                   for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * deriv(ap->data[i]);
                 });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  checked(b, "div");
  for (double v : b.data()) {
    if (v == 0.0) fail(ErrorKind::domain, "div: zero denominator");
  }
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, double b) {
  return unary_op(
      a, "add_scalar", [b](double x) { return x + b; }, [](double) { return 1.0; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary_op(
      a, "scale", [factor](double x) { return x * factor; },
      [factor](double) { return factor; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary_op(
      a, "exp", [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
  for (double v : checked(a, "log")->data) {
    if (!(v > 0.0)) fail(ErrorKind::domain, "log: non-positive argument");
  }
  return unary_op(
      a, "log", [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& a) {
  return unary_op(
      a, "softplus",
      [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      });
}

Tensor square(const Tensor& a) {
  return unary_op(
      a, "square", [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  switch (op) {
    case ElementwiseOp::add: return add(a, b);
    case ElementwiseOp::sub: return sub(a, b);
    case ElementwiseOp::mul: return mul(a, b);
    case ElementwiseOp::div: return div(a, b);
    case ElementwiseOp::scale: return mul(a, b);
    case ElementwiseOp::neg: return neg(a);
    case ElementwiseOp::exp: return exp(a);
    case ElementwiseOp::log: return log(a);
  }
  fail(ErrorKind::parameter, "elementwise: unknown op");
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, double b) {
  switch (op) {
    case ElementwiseOp::add: return add_scalar(a, b);
    case ElementwiseOp::sub: return add_scalar(a, -b);
    case ElementwiseOp::mul:
    case ElementwiseOp::scale: return scale(a, b);
    case ElementwiseOp::div:
      if (b == 0.0) fail(ErrorKind::domain, "div: zero denominator");
      return scale(a, 1.0 / b);
    case ElementwiseOp::neg: return neg(a);
    case ElementwiseOp::exp: return exp(a);
    case ElementwiseOp::log: return log(a);
  }
  fail(ErrorKind::parameter, "elementwise: unknown op");
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (checked(s, "scale_by")->data.size() != 1) {
    fail(ErrorKind::dimension, "scale_by: factor must hold one value, got " +
                                   shape_str(s.shape()));
  }
  if (a.numel() == 1 && a.shape() != s.shape()) {
    return reshape(mul(reshape(a, s.shape()), s), a.shape());
  }
  return mul(a, s);
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const auto& xi = checked(x, "add_bias");
  const auto& bi = checked(bias, "add_bias");
  const std::size_t n = last_dim(xi->shape);
  if (bi->data.size() != n) {
    fail(ErrorKind::dimension, "add_bias: bias " + shape_str(bi->shape) +
                                   " does not match last axis of " + shape_str(xi->shape));
  }
  const std::size_t total = xi->data.size();
  std::vector<double> out(total);
  for (std::size_t i = 0; i < total; ++i) out[i] = xi->data[i] + bi->data[i % n];
  TensorImpl* xp = xi.get();
  TensorImpl* bp = bi.get();
  return make_op(xi->shape, std::move(out), {xi, bi},
                 [xp, bp, n, total](const std::vector<double>& g) {
                   if (xp->requires_grad) {
                     auto& gx = grad_buf(*xp);
                     for (std::size_t i = 0; i < total; ++i) gx[i] += g[i];
                   }
                   if (bp->requires_grad) {
                     auto& gb = grad_buf(*bp);
                     for (std::size_t i = 0; i < total; ++i) gb[i % n] += g[i];
                   }
                 });
}

// ----------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  const auto& ai = checked(a, "sum");
  double s = 0.0;
  for (double v : ai->data) s += v;
  TensorImpl* ap = ai.get();
  return make_op({}, {s}, {ai}, [ap](const std::vector<double>& g) {
    if (!ap->requires_grad) return;
    auto& ga = grad_buf(*ap);
    for (auto& v : ga) v += g[0];
  });
}

Tensor mean(const Tensor& a) {
  const auto n = checked(a, "mean")->data.size();
  if (n == 0) fail(ErrorKind::dimension, "mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Tensor sum_squares(const Tensor& a) {
  const auto& ai = checked(a, "sum_squares");
  double s = 0.0;
  for (double v : ai->data) s += v * v;
  TensorImpl* ap = ai.get();
  return make_op({}, {s}, {ai}, [ap](const std::vector<double>& g) {
    if (!ap->requires_grad) return;
    auto& ga = grad_buf(*ap);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * ap->data[i] * g[0];
  });
}

// ----------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b) {
  checked(a, "matmul");
  checked(b, "matmul");
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    fail(ErrorKind::dimension, "matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                   " x " + shape_str(b.shape()));
  }
  const auto& ai = a.impl();
  const auto& bi = b.impl();
  std::vector<double> out(m * n, 0.0);
  const double* A = ai->data.data();
  const double* B = bi->data.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  TensorImpl* ap = ai.get();
  TensorImpl* bp = bi.get();
  return make_op({m, n}, std::move(out), {ai, bi},
                 [ap, bp, m, k, n](const std::vector<double>& g) {
                   const double* A = ap->data.data();
                   const double* B = bp->data.data();
                   if (ap->requires_grad) {
                     auto& ga = grad_buf(*ap);
                     for (std::size_t i = 0; i < m; ++i) {
                       for (std::size_t p = 0; p < k; ++p) {
                         double acc = 0.0;
                         for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B[p * n + j];
                         ga[i * k + p] += acc;
                       }
                     }
                   }
                   if (bp->requires_grad) {
                     auto& gb = grad_buf(*bp);
                     for (std::size_t i = 0; i < m; ++i) {
                       for (std::size_t p = 0; p < k; ++p) {
                         const double av = A[i * k + p];
                         for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                       }
                     }
                   }
                 });
}

Tensor transpose(const Tensor& a) {
  checked(a, "transpose");
  require_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  const auto& ai = a.impl();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ai->data[i * n + j];
  TensorImpl* ap = ai.get();
  return make_op({n, m}, std::move(out), {ai}, [ap, m, n](const std::vector<double>& g) {
    if (!ap->requires_grad) return;
    auto& ga = grad_buf(*ap);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  const auto& ai = checked(a, "reshape");
  if (shape_numel(shape) != ai->data.size()) {
    fail(ErrorKind::dimension, "reshape: cannot view " + shape_str(ai->shape) + " as " +
                                   shape_str(shape));
  }
  TensorImpl* ap = ai.get();
  return make_op(std::move(shape), ai->data, {ai}, [ap](const std::vector<double>& g) {
    if (!ap->requires_grad) return;
    auto& ga = grad_buf(*ap);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  const auto& ai = checked(a, "slice_rows");
  if (ai->shape.empty()) fail(ErrorKind::dimension, "slice_rows: scalar input");
  const std::size_t rows = ai->shape[0];
  if (begin + count > rows) {
    fail(ErrorKind::dimension, "slice_rows: rows [" + std::to_string(begin) + ", " +
                                   std::to_string(begin + count) + ") out of range for " +
                                   shape_str(ai->shape));
  }
  const std::size_t width = rows ? ai->data.size() / rows : 0;
  Shape shape = ai->shape;
  shape[0] = count;
  std::vector<double> out(ai->data.begin() + static_cast<std::ptrdiff_t>(begin * width),
                          ai->data.begin() + static_cast<std::ptrdiff_t>((begin + count) * width));
  TensorImpl* ap = ai.get();
  return make_op(std::move(shape), std::move(out), {ai},
                 [ap, begin, width](const std::vector<double>& g) {
                   if (!ap->requires_grad) return;
                   auto& ga = grad_buf(*ap);
                   for (std::size_t i = 0; i < g.size(); ++i) ga[begin * width + i] += g[i];
                 });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  checked(a, "slice_cols");
  require_rank2(a, "slice_cols");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (begin + count > n) {
    fail(ErrorKind::dimension, "slice_cols: columns out of range for " + shape_str(a.shape()));
  }
  const auto& ai = a.impl();
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = ai->data[i * n + begin + j];
  TensorImpl* ap = ai.get();
  return make_op({m, count}, std::move(out), {ai},
                 [ap, m, n, begin, count](const std::vector<double>& g) {
                   if (!ap->requires_grad) return;
                   auto& ga = grad_buf(*ap);
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < count; ++j)
                       ga[i * n + begin + j] += g[i * count + j];
                 });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) fail(ErrorKind::dimension, "concat_rows: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<ImplPtr> inputs;
  std::vector<double> out;
  for (const auto& p : parts) {
    const auto& pi = checked(p, "concat_rows");
    if (pi->shape.empty() || Shape(pi->shape.begin() + 1, pi->shape.end()) != tail) {
      fail(ErrorKind::dimension, "concat_rows: incompatible shape " + shape_str(pi->shape));
    }
    rows += pi->shape[0];
    out.insert(out.end(), pi->data.begin(), pi->data.end());
    inputs.push_back(pi);
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  std::vector<TensorImpl*> raw;
  for (const auto& in : inputs) raw.push_back(in.get());
  return make_op(std::move(shape), std::move(out), inputs,
                 [raw](const std::vector<double>& g) {
                   std::size_t offset = 0;
                   for (TensorImpl* p : raw) {
                     const std::size_t n = p->data.size();
                     if (p->requires_grad) {
                       auto& gp = grad_buf(*p);
                       for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
                     }
                     offset += n;
                   }
                 });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) fail(ErrorKind::dimension, "concat_cols: no inputs");
  const std::size_t m = parts[0].dim(0);
  std::size_t total = 0;
  std::vector<ImplPtr> inputs;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    checked(p, "concat_cols");
    require_rank2(p, "concat_cols");
    if (p.dim(0) != m) {
      fail(ErrorKind::dimension, "concat_cols: row count mismatch " + shape_str(p.shape()));
    }
    widths.push_back(p.dim(1));
    total += p.dim(1);
    inputs.push_back(p.impl());
  }
  std::vector<double> out(m * total);
  std::size_t col = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& d = inputs[k]->data;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * total + col + j] = d[i * widths[k] + j];
    col += widths[k];
  }
  std::vector<TensorImpl*> raw;
  for (const auto& in : inputs) raw.push_back(in.get());
  return make_op({m, total}, std::move(out), inputs,
                 [raw, widths, m, total](const std::vector<double>& g) {
                   std::size_t col = 0;
                   for (std::size_t k = 0; k < raw.size(); ++k) {
                     if (raw[k]->requires_grad) {
                       auto& gp = grad_buf(*raw[k]);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < widths[k]; ++j)
                           gp[i * widths[k] + j] += g[i * total + col + j];
                     }
                     col += widths[k];
                   }
                 });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  const auto& ai = checked(a, "gather_rows");
  if (ai->shape.empty()) fail(ErrorKind::dimension, "gather_rows: scalar input");
  const std::size_t rows = ai->shape[0];
  const std::size_t width = rows ? ai->data.size() / rows : 0;
  std::vector<double> out;
  out.reserve(index.size() * width);
  for (std::size_t r : index) {
    if (r >= rows) fail(ErrorKind::dimension, "gather_rows: index " + std::to_string(r) +
                                                  " out of range for " + shape_str(ai->shape));
    out.insert(out.end(), ai->data.begin() + static_cast<std::ptrdiff_t>(r * width),
               ai->data.begin() + static_cast<std::ptrdiff_t>((r + 1) * width));
  }
  Shape shape = ai->shape;
  shape[0] = index.size();
  std::vector<std::size_t> idx(index.begin(), index.end());
  TensorImpl* ap = ai.get();
  return make_op(std::move(shape), std::move(out), {ai},
                 [ap, idx, width](const std::vector<double>& g) {
                   if (!ap->requires_grad) return;
                   auto& ga = grad_buf(*ap);
                   for (std::size_t k = 0; k < idx.size(); ++k)
                     for (std::size_t j = 0; j < width; ++j) ga[idx[k] * width + j] += g[k * width + j];
                 });
}

// ----------------------------------------------------------------------------
// Softmax family

namespace {

Tensor softmax_impl(const Tensor& scores, const BinaryMatrix* mask, MaskMode mode) {
  const auto& si = checked(scores, "masked_softmax");
  const std::size_t n = last_dim(si->shape);
  const std::size_t rows = n ? si->data.size() / n : 0;
  if (mask && (mask->rows() != rows || mask->cols() != n)) {
    fail(ErrorKind::dimension, "masked_softmax: mask " + std::to_string(mask->rows()) + "x" +
                                   std::to_string(mask->cols()) + " does not match scores " +
                                   shape_str(si->shape));
  }
  std::vector<double> out(si->data.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* s = si->data.data() + r * n;
    double* y = out.data() + r * n;
    if (mask && mask->row_count(r) == 0) {
      fail(ErrorKind::domain, "masked_softmax: row " + std::to_string(r) +
                                  " has no allowed positions");
    }
    const bool hard = mask && mode == MaskMode::neg_inf;
    auto allowed = [&](std::size_t c) { return !hard || mask->get(r, c); };
    auto logit = [&](std::size_t c) {
      return (mask && mode == MaskMode::product && !mask->get(r, c)) ? 0.0 : s[c];
    };
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c)
      if (allowed(c)) mx = std::max(mx, logit(c));
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (!allowed(c)) continue;
      y[c] = std::exp(logit(c) - mx);
      z += y[c];
    }
    for (std::size_t c = 0; c < n; ++c)
      if (allowed(c)) y[c] /= z;
  }
  std::vector<double> saved = out;
  std::optional<BinaryMatrix> keep;
  const bool product = mask && mode == MaskMode::product;
  if (product) keep = *mask;
  TensorImpl* sp = si.get();
  return make_op(si->shape, std::move(out), {si},
                 [sp, saved = std::move(saved), keep = std::move(keep), rows,
                  n](const std::vector<double>& g) {
                   if (!sp->requires_grad) return;
                   auto& gs = grad_buf(*sp);
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* y = saved.data() + r * n;
                     const double* gr = g.data() + r * n;
                     double dot = 0.0;
                     for (std::size_t c = 0; c < n; ++c) dot += gr[c] * y[c];
                     for (std::size_t c = 0; c < n; ++c) {
                       double d = y[c] * (gr[c] - dot);
                       if (keep && !keep->get(r, c)) d = 0.0;
                       gs[r * n + c] += d;
                     }
                   }
                 });
}

}  // namespace

Tensor softmax_rows(const Tensor& scores) {
  return softmax_impl(scores, nullptr, MaskMode::neg_inf);
}

Tensor masked_softmax(const Tensor& scores, const BinaryMatrix& mask, MaskMode mode) {
  return softmax_impl(scores, &mask, mode);
}

// ----------------------------------------------------------------------------
// Normalization and regularization

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto& xi = checked(x, "layer_norm");
  const auto& gi = checked(gamma, "layer_norm");
  const auto& bi = checked(beta, "layer_norm");
  const std::size_t d = last_dim(xi->shape);
  if (d == 0) fail(ErrorKind::dimension, "layer_norm: empty last axis");
  if (gi->data.size() != d || bi->data.size() != d) {
    fail(ErrorKind::dimension, "layer_norm: gamma/beta must match last axis of " +
                                   shape_str(xi->shape));
  }
  if (!(eps > 0.0)) fail(ErrorKind::parameter, "layer_norm: eps must be positive");
  const std::size_t rows = xi->data.size() / d;
  std::vector<double> xhat(xi->data.size());
  std::vector<double> inv_std(rows);
  std::vector<double> out(xi->data.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xi->data.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gi->data[j] + bi->data[j];
    }
  }
  TensorImpl* xp = xi.get();
  TensorImpl* gp = gi.get();
  TensorImpl* bp = bi.get();
  return make_op(xi->shape, std::move(out), {xi, gi, bi},
                 [xp, gp, bp, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                  d](const std::vector<double>& g) {
                   if (gp->requires_grad) {
                     auto& gg = grad_buf(*gp);
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
                   }
                   if (bp->requires_grad) {
                     auto& gb = grad_buf(*bp);
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
                   }
                   if (xp->requires_grad) {
                     auto& gx = grad_buf(*xp);
                     const double inv_d = 1.0 / static_cast<double>(d);
                     for (std::size_t r = 0; r < rows; ++r) {
                       double m1 = 0.0, m2 = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                         const double dh = g[r * d + j] * gp->data[j];
                         m1 += dh;
                         m2 += dh * xhat[r * d + j];
                       }
                       m1 *= inv_d;
                       m2 *= inv_d;
                       for (std::size_t j = 0; j < d; ++j) {
                         const double dh = g[r * d + j] * gp->data[j];
                         gx[r * d + j] += inv_std[r] * (dh - m1 - xhat[r * d + j] * m2);
                       }
                     }
                   }
                 });
}

Tensor dropout(const Tensor& x, double p, std::uint64_t seed, bool training) {
  checked(x, "dropout");
  if (!(p >= 0.0 && p < 1.0)) {
    fail(ErrorKind::parameter, "dropout: probability must lie in [0, 1), got " +
                                   std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  Rng rng(seed);
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> factor(x.numel());
  for (auto& f : factor) f = uniform01(rng) < p ? 0.0 : keep_scale;
  const auto& xi = x.impl();
  std::vector<double> out(factor.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xi->data[i] * factor[i];
  TensorImpl* xp = xi.get();
  return make_op(xi->shape, std::move(out), {xi},
                 [xp, factor = std::move(factor)](const std::vector<double>& g) {
                   if (!xp->requires_grad) return;
                   auto& gx = grad_buf(*xp);
                   for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * factor[i];
                 });
}

// ----------------------------------------------------------------------------
// Losses and similarities

Tensor mse(const Tensor& pred, const Tensor& target) {
  checked(pred, "mse");
  checked(target, "mse");
  if (pred.shape() != target.shape()) {
    fail(ErrorKind::dimension, "mse: shape mismatch " + shape_str(pred.shape()) + " vs " +
                                   shape_str(target.shape()));
  }
  if (pred.numel() == 0) fail(ErrorKind::dimension, "mse: empty input");
  return scale(sum_squares(sub(pred, target)), 1.0 / static_cast<double>(pred.numel()));
}

Tensor row_cosine(const Tensor& a, const Tensor& b) {
  checked(a, "row_cosine");
  checked(b, "row_cosine");
  require_rank2(a, "row_cosine");
  if (a.shape() != b.shape()) {
    fail(ErrorKind::dimension, "row_cosine: shape mismatch " + shape_str(a.shape()) + " vs " +
                                   shape_str(b.shape()));
  }
  const std::size_t rows = a.dim(0), d = a.dim(1);
  const auto& ai = a.impl();
  const auto& bi = b.impl();
  std::vector<double> out(rows), na(rows), nb(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double x = ai->data[r * d + j], y = bi->data[r * d + j];
      dot += x * y;
      aa += x * x;
      bb += y * y;
    }
    if (aa == 0.0 || bb == 0.0) fail(ErrorKind::domain, "cosine similarity: zero-norm input");
    na[r] = std::sqrt(aa);
    nb[r] = std::sqrt(bb);
    out[r] = dot / (na[r] * nb[r]);
  }
  std::vector<double> sims = out;
  TensorImpl* ap = ai.get();
  TensorImpl* bp = bi.get();
  return make_op({rows}, std::move(out), {ai, bi},
                 [ap, bp, sims = std::move(sims), na = std::move(na), nb = std::move(nb), rows,
                  d](const std::vector<double>& g) {
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double inv = 1.0 / (na[r] * nb[r]);
                     const double s = sims[r];
                     const double* x = ap->data.data() + r * d;
                     const double* y = bp->data.data() + r * d;
                     if (ap->requires_grad) {
                       auto& ga = grad_buf(*ap);
                       const double k = s / (na[r] * na[r]);
                       for (std::size_t j = 0; j < d; ++j) ga[r * d + j] += g[r] * (y[j] * inv - k * x[j]);
                     }
                     if (bp->requires_grad) {
                       auto& gb = grad_buf(*bp);
                       const double k = s / (nb[r] * nb[r]);
                       for (std::size_t j = 0; j < d; ++j) gb[r * d + j] += g[r] * (x[j] * inv - k * y[j]);
                     }
                   }
                 });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  checked(a, "cosine_similarity");
  checked(b, "cosine_similarity");
  if (a.numel() != b.numel()) {
    fail(ErrorKind::dimension, "cosine_similarity: length mismatch " + shape_str(a.shape()) +
                                   " vs " + shape_str(b.shape()));
  }
  const std::size_t d = a.numel();
  return reshape(row_cosine(reshape(a, {1, d}), reshape(b, {1, d})), {});
}

}  // namespace tflab
