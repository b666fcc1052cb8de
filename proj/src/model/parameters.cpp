#include "eva/parameters.hpp"

#include <algorithm>
#include <stdexcept>

namespace eva {

template <typename Real>
Tensor<Real> ParameterSet<Real>::add(const std::string& name, Shape shape) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Tensor<Real> t(std::move(shape), true);
  entries_.push_back({name, t});
  return t;
}

template <typename Real>
bool ParameterSet<Real>::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.name == name; });
}

template <typename Real>
const Tensor<Real>& ParameterSet<Real>::get(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw std::out_of_range("unknown parameter: " + name);
}

template <typename Real>
std::vector<Tensor<Real>> ParameterSet<Real>::tensors() const {
  std::vector<Tensor<Real>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.tensor);
  return out;
}

template <typename Real>
std::int64_t ParameterSet<Real>::count() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::int64_t>(e.tensor.numel());
  return n;
}

template <typename Real>
std::int64_t ParameterSet<Real>::count_prefix(const std::string& prefix) const {
  std::int64_t n = 0;
  for (const auto& e : entries_) {
    if (e.name.rfind(prefix, 0) == 0) n += static_cast<std::int64_t>(e.tensor.numel());
  }
  return n;
}

template <typename Real>
void ParameterSet<Real>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename Real>
void init_normal(Tensor<Real>& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = static_cast<Real>(dist(rng));
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template void init_normal<float>(Tensor<float>&, double, std::mt19937_64&);
template void init_normal<double>(Tensor<double>&, double, std::mt19937_64&);

}  // namespace eva
