#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace eva {

using Shape = std::vector<std::int64_t>;

/// Raised when tensor shapes are inconsistent; the message names the axis.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised on NaN/Inf when finite checks are enabled, and by training on a
/// non-finite loss.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::int64_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

template <typename Real>
struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad and accumulates into inputs that have wants_grad set.
  std::function<void(Node&)> backward;
  // Scratch flag owned by the running backward pass.
  bool wants_grad = false;

  bool is_leaf() const { return !backward; }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
  }
};

}  // namespace detail

/// Dense row-major tensor handle. Copies share storage; use clone() or
/// detach() for an independent copy.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;
  using Node = detail::Node<Real>;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor scalar(Real value, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::int64_t dim(std::size_t axis) const;
  std::size_t numel() const { return node().data.size(); }

  std::span<Real> data() { return node().data; }
  std::span<const Real> data() const { return node().data; }
  Real operator[](std::size_t i) const { return node().data[i]; }
  Real item() const;

  /// Gradient buffer; allocated (zero) on first mutable access.
  std::span<Real> grad();
  std::span<const Real> grad() const { return node().grad; }
  bool has_grad() const { return !node().grad.empty(); }
  void zero_grad();

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool value) { node().requires_grad = value; }
  bool is_leaf() const { return node().is_leaf(); }
  const std::string& op() const { return node().op; }

  /// New leaf holding a copy of the values, outside any graph.
  Tensor detach(bool requires_grad = false) const;
  Tensor clone() const { return detach(requires_grad()); }

  Node& node() const;
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Checked mode: every op verifies its output is finite.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

namespace detail {

/// Builds an op result and wires it into the graph when any input requires
/// a gradient and recording is enabled.
template <typename Real>
Tensor<Real> make_result(Shape shape, std::vector<Real> data, const char* op,
                         std::vector<Tensor<Real>> inputs,
                         std::function<void(Node<Real>&)> backward);

template <typename Real>
inline bool wants(const Node<Real>& self, std::size_t input) {
  return self.inputs[input] && self.inputs[input]->wants_grad;
}

}  // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace eva
