#pragma once

#include <span>
#include <vector>

#include "eva/tensor.hpp"

namespace eva {

/// Executed differentiable operations reachable from a root, in topological
/// order: every node appears after the producers of all of its inputs.
template <typename Real>
class Graph {
 public:
  using Node = detail::Node<Real>;

  static Graph trace(const Tensor<Real>& root);

  std::span<Node* const> nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node*> nodes_;
};

/// d(loss)/d(leaf) accumulated into every requires_grad leaf of the graph.
template <typename Real>
void backward(const Tensor<Real>& loss);

/// Same, but only leaves listed in `wrt` receive gradients and only the part
/// of the graph leading to them is evaluated.
template <typename Real>
void backward(const Tensor<Real>& loss, std::span<const Tensor<Real>> wrt);

/// Backpropagates an explicit upstream gradient `seed` (same size as root).
template <typename Real>
void backward_from(const Tensor<Real>& root, std::span<const Real> seed,
                   std::span<const Tensor<Real>> wrt = {});

/// Scales all gradients so their joint L2 norm is at most max_norm.
/// Returns the applied factor (1 when no clipping happened).
template <typename Real>
double clip_global_norm(std::span<Tensor<Real>> params, double max_norm);

/// Joint L2 norm of the gradients (missing gradients count as zero).
template <typename Real>
double global_grad_norm(std::span<const Tensor<Real>> params);

}  // namespace eva
