// SPDX-License-Identifier: Apache-2.0
#include "tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "rng.hpp"

namespace dvnc {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

namespace detail {

namespace {
std::atomic<uint64_t> g_next_id{1};
}

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value,
                                const char* op) {
  auto n = std::make_shared<Node>();
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  return n;
}

void ensure_grad(Node& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
}

}  // namespace detail

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

void check_shape(const Shape& shape, const char* op) {
  if (shape.empty() || shape.size() > 2)
    fail(ErrorKind::dimension, std::string(op) + ": rank must be 1 or 2");
  for (int64_t d : shape)
    if (d <= 0) fail(ErrorKind::dimension, std::string(op) + ": nonpositive dim");
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v)
    if (!std::isfinite(x))
      fail(ErrorKind::numeric, std::string(op) + ": non-finite input");
}

// Memoized per-node scan; mutation clears the flag.
void ensure_finite(const Tensor& t, const char* op) {
  detail::Node& n = *t.node();
  if (n.value_checked) return;
  check_finite(n.value, op);
  n.value_checked = true;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    fail(ErrorKind::dimension, std::string(op) + ": shape mismatch");
}

bool any_requires_grad(const std::vector<Tensor>& ts) {
  for (const Tensor& t : ts)
    if (t.requires_grad()) return true;
  return false;
}

using detail::ensure_grad;

// Builds the output node and, when some input carries gradient, records
// parents and the backward closure.
Tensor make_op(const char* op, Shape shape, std::vector<double> value,
               std::vector<Tensor> inputs,
               std::function<void(Node&)> backward_fn) {
  auto n = detail::make_node(std::move(shape), std::move(value), op);
  check_finite(n->value, op);
  n->value_checked = true;
  if (any_requires_grad(inputs)) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) n->parents.push_back(t.node());
    n->backward_fn = std::move(backward_fn);
  }
  return wrap_node(n);
}

int64_t rows_of(const Tensor& t) { return t.rank() == 2 ? t.shape()[0] : 1; }
int64_t cols_of(const Tensor& t) {
  return t.rank() == 2 ? t.shape()[1] : t.shape()[0];
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor wrap_node(std::shared_ptr<detail::Node> n) { return Tensor(std::move(n)); }

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape, "tensor");
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    fail(ErrorKind::dimension, "tensor: shape does not match data length");
  check_finite(data, "tensor");
  auto n = detail::make_node(std::move(shape), std::move(data), "leaf");
  n->requires_grad = requires_grad;
  n->value_checked = true;
  return wrap_node(n);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  check_shape(shape, "tensor");
  std::vector<double> d(static_cast<size_t>(shape_numel(shape)), 0.0);
  return from(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  check_shape(shape, "tensor");
  std::vector<double> d(static_cast<size_t>(shape_numel(shape)), v);
  return from(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

double Tensor::value() const {
  if (numel() != 1) fail(ErrorKind::contract, "value(): tensor is not scalar");
  return node_->value[0];
}

double Tensor::at(int64_t r, int64_t c) const {
  if (rank() != 2) fail(ErrorKind::contract, "at(r,c): tensor is not rank 2");
  return node_->value[static_cast<size_t>(r * shape()[1] + c)];
}

const std::vector<double>& Tensor::grad() const {
  static const std::vector<double> empty;
  return node_->grad.empty() ? empty : node_->grad;
}

std::vector<double>& Tensor::mutable_grad() {
  ensure_grad(*node_);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    fail(ErrorKind::dimension, "matmul: both inputs must be rank 2");
  const int64_t m = a.shape()[0], k = a.shape()[1];
  const int64_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) fail(ErrorKind::dimension, "matmul: inner dims disagree");
  ensure_finite(a, "matmul");
  ensure_finite(b, "matmul");

  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  const auto& av = a.data();
  const auto& bv = b.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t p = 0; p < k; ++p) {
      const double aip = av[static_cast<size_t>(i * k + p)];
      if (aip == 0.0) continue;
      for (int64_t j = 0; j < n; ++j)
        out[static_cast<size_t>(i * n + j)] += aip * bv[static_cast<size_t>(p * n + j)];
    }

  NodePtr an = a.node(), bn = b.node();
  return make_op("matmul", {m, n}, std::move(out), {a, b},
                 [an, bn, m, k, n](Node& node) {
                   const auto& g = node.grad;
                   if (an->requires_grad) {
                     ensure_grad(*an);
                     for (int64_t i = 0; i < m; ++i)
                       for (int64_t p = 0; p < k; ++p) {
                         double acc = 0.0;
                         for (int64_t j = 0; j < n; ++j)
                           acc += g[static_cast<size_t>(i * n + j)] *
                                  bn->value[static_cast<size_t>(p * n + j)];
                         an->grad[static_cast<size_t>(i * k + p)] += acc;
                       }
                   }
                   if (bn->requires_grad) {
                     ensure_grad(*bn);
                     for (int64_t p = 0; p < k; ++p)
                       for (int64_t j = 0; j < n; ++j) {
                         double acc = 0.0;
                         for (int64_t i = 0; i < m; ++i)
                           acc += an->value[static_cast<size_t>(i * k + p)] *
                                  g[static_cast<size_t>(i * n + j)];
                         bn->grad[static_cast<size_t>(p * n + j)] += acc;
                       }
                   }
                 });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) fail(ErrorKind::dimension, "transpose: rank-2 only");
  ensure_finite(a, "transpose");
  const int64_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(static_cast<size_t>(r * c));
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j)
      out[static_cast<size_t>(j * r + i)] = a.data()[static_cast<size_t>(i * c + j)];
  NodePtr an = a.node();
  return make_op("transpose", {c, r}, std::move(out), {a},
                 [an, r, c](Node& node) {
                   if (!an->requires_grad) return;
                   ensure_grad(*an);
                   for (int64_t i = 0; i < r; ++i)
                     for (int64_t j = 0; j < c; ++j)
                       an->grad[static_cast<size_t>(i * c + j)] +=
                           node.grad[static_cast<size_t>(j * r + i)];
                 });
}

namespace {

Tensor elementwise_binary(const char* op, const Tensor& a, const Tensor& b,
                          double (*f)(double, double), double sign_a,
                          double sign_b, bool mul_rule) {
  check_same_shape(a, b, op);
  ensure_finite(a, op);
  ensure_finite(b, op);
  const size_t n = a.data().size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = f(a.data()[i], b.data()[i]);
  NodePtr an = a.node(), bn = b.node();
  return make_op(op, a.shape(), std::move(out), {a, b},
                 [an, bn, sign_a, sign_b, mul_rule, n](Node& node) {
                   if (an->requires_grad) {
                     ensure_grad(*an);
                     for (size_t i = 0; i < n; ++i)
                       an->grad[i] += node.grad[i] *
                                      (mul_rule ? bn->value[i] : sign_a);
                   }
                   if (bn->requires_grad) {
                     ensure_grad(*bn);
                     for (size_t i = 0; i < n; ++i)
                       bn->grad[i] += node.grad[i] *
                                      (mul_rule ? an->value[i] : sign_b);
                   }
                 });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      "add", a, b, [](double x, double y) { return x + y; }, 1.0, 1.0, false);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      "sub", a, b, [](double x, double y) { return x - y; }, 1.0, -1.0, false);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      "mul", a, b, [](double x, double y) { return x * y; }, 0.0, 0.0, true);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) fail(ErrorKind::dimension, "concat: no inputs");
  const int64_t rank = parts[0].rank();
  if (axis < 0 || axis >= rank) fail(ErrorKind::dimension, "concat: bad axis");
  for (const Tensor& t : parts) {
    if (t.rank() != rank) fail(ErrorKind::dimension, "concat: rank mismatch");
    for (int64_t d = 0; d < rank; ++d)
      if (d != axis && t.shape()[d] != parts[0].shape()[d])
        fail(ErrorKind::dimension, "concat: off-axis dim mismatch");
    ensure_finite(t, "concat");
  }

  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const Tensor& t : parts) out_shape[axis] += t.shape()[axis];

  const int64_t out_rows = rank == 2 ? out_shape[0] : 1;
  const int64_t out_cols = rank == 2 ? out_shape[1] : out_shape[0];
  std::vector<double> out(static_cast<size_t>(out_rows * out_cols));

  // offsets[i]: (row, col) where part i starts
  std::vector<std::pair<int64_t, int64_t>> offsets;
  {
    int64_t r = 0, c = 0;
    for (const Tensor& t : parts) {
      offsets.emplace_back(r, c);
      if (axis == 0 && rank == 2)
        r += t.shape()[0];
      else if (rank == 2)
        c += t.shape()[1];
      else
        c += t.shape()[0];
    }
  }
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& t = parts[pi];
    const int64_t tr = rows_of(t), tc = cols_of(t);
    for (int64_t i = 0; i < tr; ++i)
      for (int64_t j = 0; j < tc; ++j)
        out[static_cast<size_t>((offsets[pi].first + i) * out_cols +
                                offsets[pi].second + j)] =
            t.data()[static_cast<size_t>(i * tc + j)];
  }

  std::vector<NodePtr> nodes;
  for (const Tensor& t : parts) nodes.push_back(t.node());
  std::vector<std::pair<int64_t, int64_t>> sizes;
  for (const Tensor& t : parts) sizes.emplace_back(rows_of(t), cols_of(t));

  return make_op("concat", out_shape, std::move(out), parts,
                 [nodes, offsets, sizes, out_cols](Node& node) {
                   for (size_t pi = 0; pi < nodes.size(); ++pi) {
                     Node& p = *nodes[pi];
                     if (!p.requires_grad) continue;
                     ensure_grad(p);
                     const auto [tr, tc] = sizes[pi];
                     for (int64_t i = 0; i < tr; ++i)
                       for (int64_t j = 0; j < tc; ++j)
                         p.grad[static_cast<size_t>(i * tc + j)] +=
                             node.grad[static_cast<size_t>(
                                 (offsets[pi].first + i) * out_cols +
                                 offsets[pi].second + j)];
                   }
                 });
}

Tensor slice(const Tensor& a, const std::vector<int64_t>& start,
             const std::vector<int64_t>& size) {
  const int64_t rank = a.rank();
  if (static_cast<int64_t>(start.size()) != rank ||
      static_cast<int64_t>(size.size()) != rank)
    fail(ErrorKind::dimension, "slice: start/size rank mismatch");
  for (int64_t d = 0; d < rank; ++d) {
    if (start[d] < 0 || size[d] <= 0 || start[d] + size[d] > a.shape()[d])
      fail(ErrorKind::dimension, "slice: out of bounds");
  }
  ensure_finite(a, "slice");

  const int64_t src_cols = cols_of(a);
  const int64_t r0 = rank == 2 ? start[0] : 0;
  const int64_t c0 = rank == 2 ? start[1] : start[0];
  const int64_t nr = rank == 2 ? size[0] : 1;
  const int64_t nc = rank == 2 ? size[1] : size[0];

  std::vector<double> out(static_cast<size_t>(nr * nc));
  for (int64_t i = 0; i < nr; ++i)
    for (int64_t j = 0; j < nc; ++j)
      out[static_cast<size_t>(i * nc + j)] =
          a.data()[static_cast<size_t>((r0 + i) * src_cols + c0 + j)];

  Shape out_shape = rank == 2 ? Shape{nr, nc} : Shape{nc};
  NodePtr an = a.node();
  return make_op("slice", std::move(out_shape), std::move(out), {a},
                 [an, r0, c0, nr, nc, src_cols](Node& node) {
                   if (!an->requires_grad) return;
                   ensure_grad(*an);
                   for (int64_t i = 0; i < nr; ++i)
                     for (int64_t j = 0; j < nc; ++j)
                       an->grad[static_cast<size_t>((r0 + i) * src_cols + c0 + j)] +=
                           node.grad[static_cast<size_t>(i * nc + j)];
                 });
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_shape(shape, "reshape");
  if (shape_numel(shape) != a.numel())
    fail(ErrorKind::dimension, "reshape: element count mismatch");
  ensure_finite(a, "reshape");
  NodePtr an = a.node();
  return make_op("reshape", std::move(shape), a.data(), {a},
                 [an](Node& node) {
                   if (!an->requires_grad) return;
                   ensure_grad(*an);
                   for (size_t i = 0; i < node.grad.size(); ++i)
                     an->grad[i] += node.grad[i];
                 });
}

Tensor softmax_lastdim(const Tensor& a) {
  ensure_finite(a, "softmax-lastdim");
  const int64_t rows = rows_of(a), cols = cols_of(a);
  std::vector<double> out(a.data().size());
  for (int64_t i = 0; i < rows; ++i) {
    const double* row = a.data().data() + i * cols;
    double mx = row[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      out[static_cast<size_t>(i * cols + j)] = std::exp(row[j] - mx);
      denom += out[static_cast<size_t>(i * cols + j)];
    }
    for (int64_t j = 0; j < cols; ++j) out[static_cast<size_t>(i * cols + j)] /= denom;
  }
  NodePtr an = a.node();
  return make_op("softmax-lastdim", a.shape(), std::move(out), {a},
                 [an, rows, cols](Node& node) {
                   if (!an->requires_grad) return;
                   ensure_grad(*an);
                   for (int64_t i = 0; i < rows; ++i) {
                     const double* y = node.value.data() + i * cols;
                     const double* gy = node.grad.data() + i * cols;
                     double dot = 0.0;
                     for (int64_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
                     for (int64_t j = 0; j < cols; ++j)
                       an->grad[static_cast<size_t>(i * cols + j)] +=
                           y[j] * (gy[j] - dot);
                   }
                 });
}

namespace {

Tensor elementwise_unary(const char* op, const Tensor& a, double (*f)(double),
                         double (*df_from_y)(double, double)) {
  ensure_finite(a, op);
  const size_t n = a.data().size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = f(a.data()[i]);
  NodePtr an = a.node();
  return make_op(op, a.shape(), std::move(out), {a},
                 [an, df_from_y, n](Node& node) {
                   if (!an->requires_grad) return;
                   ensure_grad(*an);
                   for (size_t i = 0; i < n; ++i)
                     an->grad[i] +=
                         node.grad[i] * df_from_y(node.value[i], an->value[i]);
                 });
}

}  // namespace

Tensor sigmoid(const Tensor& a) {
  return elementwise_unary(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double y, double) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return elementwise_unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double y, double) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return elementwise_unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double, double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor log(const Tensor& a) {
  return elementwise_unary(
      "log", a, [](double x) { return std::log(x); },
      [](double, double x) { return 1.0 / x; });
}

Tensor sum(const Tensor& a) {
  ensure_finite(a, "sum");
  double s = 0.0;
  for (double x : a.data()) s += x;
  NodePtr an = a.node();
  return make_op("sum", {1}, {s}, {a}, [an](Node& node) {
    if (!an->requires_grad) return;
    ensure_grad(*an);
    for (double& g : an->grad) g += node.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  ensure_finite(a, "mean");
  double s = 0.0;
  for (double x : a.data()) s += x;
  const double inv = 1.0 / static_cast<double>(a.numel());
  NodePtr an = a.node();
  return make_op("mean", {1}, {s * inv}, {a}, [an, inv](Node& node) {
    if (!an->requires_grad) return;
    ensure_grad(*an);
    for (double& g : an->grad) g += node.grad[0] * inv;
  });
}

Tensor sq_l2(const Tensor& a) {
  ensure_finite(a, "sq-l2");
  double s = 0.0;
  for (double x : a.data()) s += x * x;
  NodePtr an = a.node();
  return make_op("sq-l2", {1}, {s}, {a}, [an](Node& node) {
    if (!an->requires_grad) return;
    ensure_grad(*an);
    for (size_t i = 0; i < an->grad.size(); ++i)
      an->grad[i] += node.grad[0] * 2.0 * an->value[i];
  });
}

Tensor scale(const Tensor& a, double c) {
  if (!std::isfinite(c)) fail(ErrorKind::numeric, "scale: non-finite factor");
  ensure_finite(a, "scale");
  const size_t n = a.data().size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = a.data()[i] * c;
  NodePtr an = a.node();
  return make_op("scale", a.shape(), std::move(out), {a}, [an, c, n](Node& node) {
    if (!an->requires_grad) return;
    ensure_grad(*an);
    for (size_t i = 0; i < n; ++i) an->grad[i] += node.grad[i] * c;
  });
}

Tensor dropout(const Tensor& a, double p, uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) fail(ErrorKind::config, "dropout: p must be in [0,1)");
  ensure_finite(a, "dropout");
  const size_t n = a.data().size();
  Rng rng(seed);
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(n);
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) {
    (*mask)[i] = rng.next_double() >= p ? keep_scale : 0.0;
    out[i] = a.data()[i] * (*mask)[i];
  }
  NodePtr an = a.node();
  return make_op("dropout", a.shape(), std::move(out), {a},
                 [an, mask, n](Node& node) {
                   if (!an->requires_grad) return;
                   ensure_grad(*an);
                   for (size_t i = 0; i < n; ++i)
                     an->grad[i] += node.grad[i] * (*mask)[i];
                 });
}

Tensor custom_op(const char* op, Shape shape, std::vector<double> value,
                 const std::vector<Tensor>& inputs,
                 std::function<void(detail::Node&)> backward_fn) {
  check_shape(shape, op);
  for (const Tensor& t : inputs) ensure_finite(t, op);
  return make_op(op, std::move(shape), std::move(value), inputs,
                 std::move(backward_fn));
}

Tensor stop_gradient(const Tensor& x) {
  ensure_finite(x, "stop-gradient");
  auto n = detail::make_node(x.shape(), x.data(), "stop-gradient");
  n->value_checked = true;
  return wrap_node(n);
}

Tensor straight_through(const Tensor& forward_value, const Tensor& grad_carrier) {
  check_same_shape(forward_value, grad_carrier, "straight-through");
  ensure_finite(forward_value, "straight-through");
  ensure_finite(grad_carrier, "straight-through");
  // The carrier is the only recorded parent: forward_value never receives
  // gradient through this node, exactly.
  NodePtr cn = grad_carrier.node();
  auto n = detail::make_node(forward_value.shape(), forward_value.data(),
                             "straight-through");
  n->value_checked = true;
  if (grad_carrier.requires_grad()) {
    n->requires_grad = true;
    n->parents = {cn};
    n->backward_fn = [cn](Node& node) {
      ensure_grad(*cn);
      for (size_t i = 0; i < node.grad.size(); ++i) cn->grad[i] += node.grad[i];
    };
  }
  return wrap_node(n);
}

void backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1)
    fail(ErrorKind::contract, "backward: root must be scalar");

  // Collect ancestors of root; ids are assigned in construction order, so
  // descending id order is a reverse topological order. Visited marking uses
  // a per-call epoch; graphs are confined to one thread, so marks never race.
  static std::atomic<uint64_t> g_epoch{0};
  const uint64_t epoch = g_epoch.fetch_add(1, std::memory_order_relaxed) + 1;

  std::vector<Node*> order;
  std::vector<Node*> stack{root.node().get()};
  root.node()->visit = epoch;
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const NodePtr& p : n->parents)
      if (p->requires_grad && p->visit != epoch) {
        p->visit = epoch;
        stack.push_back(p.get());
      }
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->id > b->id; });

  ensure_grad(*root.node());
  root.node()->grad[0] += 1.0;
  for (Node* n : order) {
    if (n->backward_fn && n->requires_grad && !n->grad.empty()) n->backward_fn(*n);
  }
}

}  // namespace dvnc
