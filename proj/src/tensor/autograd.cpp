#include "eva/autograd.hpp"

#include <cmath>
#include <unordered_set>

namespace eva {

template <typename Real>
Graph<Real> Graph<Real>::trace(const Tensor<Real>& root) {
  Graph g;
  if (!root.defined() || !root.requires_grad()) return g;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(&root.node(), 0);
  visited.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    g.nodes_.push_back(node);
    stack.pop_back();
  }
  return g;
}

namespace {

template <typename Real>
void run_backward(const Tensor<Real>& root, std::span<const Real> seed,
                  std::span<const Tensor<Real>> wrt) {
  using Node = detail::Node<Real>;
  if (seed.size() != root.numel()) {
    throw DimensionError("backward seed has " + std::to_string(seed.size()) + " values, root has " +
                         std::to_string(root.numel()));
  }
  const auto graph = Graph<Real>::trace(root);
  if (graph.size() == 0) return;

  std::unordered_set<const Node*> targets;
  for (const auto& t : wrt) targets.insert(&t.node());

  for (Node* n : graph.nodes()) {
    if (n->is_leaf()) {
      n->wants_grad = targets.empty() ? n->requires_grad : targets.count(n) > 0;
    } else {
      bool any = false;
      for (const auto& in : n->inputs) any = any || (in && in->wants_grad);
      n->wants_grad = any;
      n->grad.clear();
    }
  }

  Node& top = root.node();
  if (top.wants_grad) {
    top.ensure_grad();
    for (std::size_t i = 0; i < seed.size(); ++i) top.grad[i] += seed[i];
    const auto nodes = graph.nodes();
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
      Node* n = *it;
      if (n->is_leaf() || !n->wants_grad || n->grad.empty()) continue;
      n->backward(*n);
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
  for (Node* n : graph.nodes()) n->wants_grad = false;
}

}  // namespace

template <typename Real>
void backward(const Tensor<Real>& loss) {
  backward(loss, std::span<const Tensor<Real>>{});
}

template <typename Real>
void backward(const Tensor<Real>& loss, std::span<const Tensor<Real>> wrt) {
  if (loss.numel() != 1) {
    throw DimensionError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  const Real one = 1;
  run_backward(loss, std::span<const Real>(&one, 1), wrt);
}

template <typename Real>
void backward_from(const Tensor<Real>& root, std::span<const Real> seed,
                   std::span<const Tensor<Real>> wrt) {
  run_backward(root, seed, wrt);
}

template <typename Real>
double global_grad_norm(std::span<const Tensor<Real>> params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (Real g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

template <typename Real>
double clip_global_norm(std::span<Tensor<Real>> params, double max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip_global_norm: max_norm must be positive");
  const double norm = global_grad_norm(std::span<const Tensor<Real>>(params.data(), params.size()));
  if (!(norm > max_norm)) return 1.0;
  const double scale = max_norm / norm;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (Real& g : p.grad()) g = static_cast<Real>(g * scale);
  }
  return scale;
}

#define EVA_INSTANTIATE(Real)                                                                      \
  template class Graph<Real>;                                                                      \
  template void backward(const Tensor<Real>&);                                                     \
  template void backward(const Tensor<Real>&, std::span<const Tensor<Real>>);                      \
  template void backward_from(const Tensor<Real>&, std::span<const Real>,                          \
                              std::span<const Tensor<Real>>);                                      \
  template double global_grad_norm(std::span<const Tensor<Real>>);                                 \
  template double clip_global_norm(std::span<Tensor<Real>>, double);

EVA_INSTANTIATE(float)
EVA_INSTANTIATE(double)
#undef EVA_INSTANTIATE

}  // namespace eva
