// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "error.hpp"

namespace dvnc {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);

namespace detail {

// One record of the define-by-run graph. Node ids increase monotonically as
// ops are built, so sorting by id gives a valid topological order.
struct Node {
  uint64_t id = 0;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily during backward
  bool requires_grad = false;
  bool value_checked = false;  // finite scan memoized; cleared on mutation
  uint64_t visit = 0;          // backward traversal epoch
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value,
                                const char* op);

void ensure_grad(Node& n);

}  // namespace detail

// Dense 64-bit real tensor, rank 1 or 2. Copies share the underlying node;
// ops record the graph whenever an input requires gradients. Values are
// immutable after creation except for grad accumulation and the explicit
// owner-side mutation used by optimizers between steps.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
  int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  const std::vector<double>& data() const { return node_->value; }
  // Owner-side mutation (optimizer step, checkpoint load). The caller must
  // not hold live graphs built on this tensor. The finiteness scan reruns
  // the next time the tensor enters an op.
  std::vector<double>& mutable_data() {
    node_->value_checked = false;
    return node_->value;
  }

  double value() const;  // scalar tensors only
  double at(int64_t i) const { return node_->value[static_cast<size_t>(i)]; }
  double at(int64_t r, int64_t c) const;

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const;
  std::vector<double>& mutable_grad();
  void zero_grad();

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor wrap_node(std::shared_ptr<detail::Node> n);
};

Tensor wrap_node(std::shared_ptr<detail::Node> n);

// ---- forward ops -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, const std::vector<int64_t>& start,
             const std::vector<int64_t>& size);
Tensor reshape(const Tensor& a, Shape shape);
Tensor softmax_lastdim(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sq_l2(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor dropout(const Tensor& a, double p, uint64_t seed);

// Value passthrough that blocks all gradient flow.
Tensor stop_gradient(const Tensor& x);

// Value of forward_value; the full incoming gradient is routed to
// grad_carrier and none to forward_value. Algebraically equal to
// grad_carrier + stop_gradient(forward_value - grad_carrier).
Tensor straight_through(const Tensor& forward_value, const Tensor& grad_carrier);

// Extension point for fused ops with hand-written backward rules. The value
// must already equal the op's forward result; backward_fn pulls node.grad
// into the recorded inputs.
Tensor custom_op(const char* op, Shape shape, std::vector<double> value,
                 const std::vector<Tensor>& inputs,
                 std::function<void(detail::Node&)> backward_fn);

// Reverse-mode accumulation from a scalar root into every requires_grad leaf.
void backward(const Tensor& root);

}  // namespace dvnc
