#include "eva/tensor.hpp"

#include <cmath>
#include <sstream>

namespace eva {

namespace {
thread_local bool g_grad_enabled = true;
bool g_finite_checks = false;
}  // namespace

std::int64_t element_count(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, bool requires_grad) : node_(std::make_shared<Node>()) {
  const auto n = element_count(shape);
  node_->shape = std::move(shape);
  node_->data.assign(static_cast<std::size_t>(n), Real(0));
  node_->requires_grad = requires_grad;
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> values, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  const auto n = element_count(shape);
  if (static_cast<std::int64_t>(values.size()) != n) {
    throw DimensionError("tensor of shape " + shape_string(shape) + " needs " + std::to_string(n) +
                         " values, got " + std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename Real>
Tensor<Real> Tensor<Real>::scalar(Real value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<Real>{value}, requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::full(Shape shape, Real value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.node_->data.begin(), t.node_->data.end(), value);
  return t;
}

template <typename Real>
typename Tensor<Real>::Node& Tensor<Real>::node() const {
  if (!node_) throw std::logic_error("use of an undefined tensor");
  return *node_;
}

template <typename Real>
const Shape& Tensor<Real>::shape() const {
  return node().shape;
}

template <typename Real>
std::int64_t Tensor<Real>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(s));
  }
  return s[axis];
}

template <typename Real>
Real Tensor<Real>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return node().data[0];
}

template <typename Real>
std::span<Real> Tensor<Real>::grad() {
  node().ensure_grad();
  return node().grad;
}

template <typename Real>
void Tensor<Real>::zero_grad() {
  auto& g = node().grad;
  std::fill(g.begin(), g.end(), Real(0));
}

template <typename Real>
Tensor<Real> Tensor<Real>::detach(bool requires_grad) const {
  return Tensor(shape(), node().data, requires_grad);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

namespace detail {

template <typename Real>
Tensor<Real> make_result(Shape shape, std::vector<Real> data, const char* op,
                         std::vector<Tensor<Real>> inputs,
                         std::function<void(Node<Real>&)> backward) {
  if (g_finite_checks) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!std::isfinite(data[i])) {
        throw NumericError(std::string(op) + ": non-finite value at flat index " + std::to_string(i));
      }
    }
  }
  auto node = std::make_shared<Node<Real>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) track = track || (in.defined() && in.requires_grad());
  }
  if (track) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor<Real>(std::move(node));
}

template Tensor<float> make_result(Shape, std::vector<float>, const char*, std::vector<Tensor<float>>,
                                   std::function<void(Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, const char*, std::vector<Tensor<double>>,
                                    std::function<void(Node<double>&)>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;

}  // namespace eva
