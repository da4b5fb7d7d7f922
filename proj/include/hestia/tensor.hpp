#pragma once

// Dense 64-bit real tensors on a reverse-mode computation graph.
//
// Every operation records its inputs and an adjoint rule. Adjoint rules are
// themselves written in terms of the public ops (see ops.hpp), so the tensors
// produced by a backward pass live on the same kind of graph and can be
// differentiated again. That property is what makes Hessian-vector products
// possible without any dedicated second-order machinery.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hestia::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

class Tensor;

// Maps the adjoint of a node's output to one adjoint per input.
using BackwardFn = std::function<std::vector<Tensor>(
    const Tensor& out_grad, const std::vector<Tensor>& inputs, const Tensor& out)>;

struct Node {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;  // empty for leaves and constants
  std::optional<std::vector<double>> grad;  // optional accumulation buffer
  const char* op = "leaf";
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (numel_of(shape) != values.size())
      throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match " +
                                  std::to_string(values.size()) + " values");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v) { return leaf({}, {v}); }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    auto n = numel_of(shape);
    return leaf(std::move(shape), std::vector<double>(n, v), requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 0.0, requires_grad);
  }

  static Tensor ones(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 1.0, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  const std::vector<double>& values() const { return node_->values; }
  std::size_t numel() const { return node_->values.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op_name() const { return node_->op; }

  double item() const {
    if (numel() != 1) throw std::invalid_argument("Tensor::item: tensor is not a scalar");
    return node_->values[0];
  }

  double at(std::size_t i) const { return node_->values[i]; }

  // Constant copy that cuts the graph; gradients never flow through it.
  Tensor detach() const {
    auto n = std::make_shared<Node>();
    n->shape = node_->shape;
    n->values = node_->values;
    n->requires_grad = false;
    n->op = "detach";
    return Tensor(std::move(n));
  }

  // Optional per-tensor gradient buffer (bookkeeping for optimizers; the
  // engine itself returns gradients functionally from grad()).
  bool has_grad() const { return node_->grad.has_value(); }
  const std::vector<double>& grad_values() const { return *node_->grad; }
  void set_grad(std::vector<double> g) {
    if (g.size() != numel())
      throw std::invalid_argument("Tensor::set_grad: gradient size mismatch");
    node_->grad = std::move(g);
  }
  void zero_grad() { node_->grad.reset(); }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Internal: build an op node. requires_grad is inherited from the inputs.
inline Tensor make_op(Shape shape, std::vector<double> values,
                      const std::vector<Tensor>& inputs, BackwardFn backward,
                      const char* op) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->op = op;
  n->backward = std::move(backward);
  n->inputs.reserve(inputs.size());
  for (const auto& t : inputs) {
    n->inputs.push_back(t.node());
    n->requires_grad = n->requires_grad || t.requires_grad();
  }
  return Tensor(std::move(n));
}

}  // namespace hestia::ad
