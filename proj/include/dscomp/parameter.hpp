#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dscomp/autograd.hpp"

namespace dscomp {

/// Learnable leaf with a stable name. Copies share the underlying record, so
/// two holders of the same Parameter observe each other's updates.
template <Real T>
struct Parameter {
  std::string name;
  Var<T> var;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> value, bool trainable = true)
      : name(std::move(n)), var(std::move(value), trainable) {}

  bool trainable() const { return var.requires_grad(); }
  void set_trainable(bool t) { var.node()->requires_grad = t; }
  const Tensor<T>& value() const { return var.value(); }
  Tensor<T>& mutable_value() { return var.mutable_value(); }
  const Shape& shape() const { return var.shape(); }
  std::size_t numel() const { return var.numel(); }
  Tensor<T> grad() const { return var.grad(); }
  void zero_grad() { var.node()->grad_buffer().fill(T(0)); }

  /// Independent record with the same name, value and trainable flag.
  Parameter clone() const { return Parameter(name, var.value(), trainable()); }

  operator const Var<T>&() const { return var; }
};

template <Real T>
using ParameterRefs = std::vector<Parameter<T>*>;

template <Real T>
std::size_t count_elements(const ParameterRefs<T>& ps, bool trainable_only = false) {
  std::size_t n = 0;
  for (const auto* p : ps)
    if (!trainable_only || p->trainable()) n += p->numel();
  return n;
}

template <Real T>
void zero_grad(const ParameterRefs<T>& ps) {
  for (auto* p : ps) p->zero_grad();
}

/// Deterministic initializers keyed on an explicit engine.
namespace init {

template <Real T>
Tensor<T> normal(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = T(dist(rng));
  return t;
}

/// Scaled so a product with a fan_in-wide input keeps unit variance.
template <Real T>
Tensor<T> fan_in(Shape shape, std::int64_t fan, std::mt19937_64& rng, double gain = 1.0) {
  return normal<T>(std::move(shape), gain / std::sqrt(double(fan)), rng);
}

}  // namespace init

}  // namespace dscomp
