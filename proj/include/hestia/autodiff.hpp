#pragma once

// Reverse-mode differentiation over the graph built by ops.hpp.
//
// grad() returns gradients as graph tensors, so a gradient expression can be
// fed straight back into grad() — that is how hvp() obtains exact
// Hessian-vector products (reverse-over-reverse).

#include <unordered_map>
#include <unordered_set>

#include "hestia/ops.hpp"

namespace hestia::ad {

namespace detail {

// Post-order over the requires_grad subgraph reachable from root.
// Iterative, and deterministic: children are visited in input order.
inline std::vector<std::shared_ptr<Node>> topo_order(const std::shared_ptr<Node>& root) {
  std::vector<std::shared_ptr<Node>> order;
  if (!root->requires_grad) return order;
  std::unordered_set<const Node*> seen;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    bool descended = false;
    while (next < node->inputs.size()) {
      auto& child = node->inputs[next++];
      if (child->requires_grad && !seen.count(child.get())) {
        seen.insert(child.get());
        stack.emplace_back(child, 0);
        descended = true;
        break;
      }
    }
    if (!descended && next >= stack.back().first->inputs.size()) {
      order.push_back(stack.back().first);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace detail

// Gradient of a scalar loss with respect to each of params. Params that the
// loss does not reach receive zeros. The returned tensors remain attached to
// the graph and are differentiable whenever the path allows it.
inline std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& params) {
  if (loss.numel() != 1)
    throw std::invalid_argument("grad: loss must be a scalar, got shape " +
                                shape_str(loss.shape()));

  std::unordered_map<const Node*, Tensor> adjoint;
  if (loss.requires_grad()) {
    adjoint.emplace(loss.node().get(), Tensor::ones(loss.shape()));
    auto order = detail::topo_order(loss.node());
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const auto& node = *it;
      if (!node->backward) {
        if (!node->inputs.empty())
          throw std::runtime_error(std::string("grad: op '") + node->op +
                                   "' has no registered backward rule");
        continue;  // leaf
      }
      auto found = adjoint.find(node.get());
      if (found == adjoint.end()) continue;  // no contribution reached this node
      std::vector<Tensor> inputs;
      inputs.reserve(node->inputs.size());
      for (const auto& in : node->inputs) inputs.emplace_back(in);
      std::vector<Tensor> contribs = node->backward(found->second, inputs, Tensor(node));
      if (contribs.size() != node->inputs.size())
        throw std::runtime_error(std::string("grad: op '") + node->op +
                                 "' returned wrong number of adjoints");
      for (std::size_t i = 0; i < contribs.size(); ++i) {
        const auto& in = node->inputs[i];
        if (!in->requires_grad) continue;
        auto slot = adjoint.find(in.get());
        if (slot == adjoint.end())
          adjoint.emplace(in.get(), contribs[i]);
        else
          slot->second = add(slot->second, contribs[i]);
      }
    }
  }

  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    auto found = adjoint.find(p.node().get());
    out.push_back(found != adjoint.end() ? found->second : Tensor::zeros(p.shape()));
  }
  return out;
}

// Hessian-vector product H v where H is the Hessian of a scalar loss
// restricted to param's coordinates. v is treated as a constant.
inline Tensor hvp(const Tensor& loss, const Tensor& param, const Tensor& v) {
  if (v.shape() != param.shape())
    throw std::invalid_argument("hvp: v must match the param shape");
  Tensor g = grad(loss, {param})[0];
  if (!g.requires_grad()) return Tensor::zeros(param.shape());  // flat gradient
  Tensor s = sum(mul(g, v.detach()));
  return grad(s, {param})[0];
}

}  // namespace hestia::ad
