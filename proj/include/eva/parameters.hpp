#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "eva/tensor.hpp"

namespace eva {

template <typename Real>
struct NamedParameter {
  std::string name;
  Tensor<Real> tensor;
};

/// Ordered, named collection of trainable leaves.
template <typename Real>
class ParameterSet {
 public:
  /// Registers a zero-filled leaf with requires_grad set. Names are unique.
  Tensor<Real> add(const std::string& name, Shape shape);

  const Tensor<Real>& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<NamedParameter<Real>>& entries() const { return entries_; }
  std::vector<Tensor<Real>> tensors() const;

  std::int64_t count() const;
  std::int64_t count_prefix(const std::string& prefix) const;
  void zero_grad();

 private:
  std::vector<NamedParameter<Real>> entries_;
};

/// Fills with N(0, stddev) draws from rng, in storage order.
template <typename Real>
void init_normal(Tensor<Real>& t, double stddev, std::mt19937_64& rng);

}  // namespace eva
