#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cll/model.hpp"
#include "cll/tensor.hpp"

namespace cll {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

struct AdamState {
  Tensor<Real> m;
  Tensor<Real> v;
  std::uint64_t t = 0;
};

// One bias-corrected Adam update of `param` in place. Throws NonFiniteError
// (leaving param and state untouched) when grad holds NaN or Inf.
void adam_step(Tensor<Real>& param, const Tensor<Real>& grad, AdamState& state, const AdamConfig& config);

// param -= lr * grad.
void sgd_step(Tensor<Real>& param, const Tensor<Real>& grad, double lr);

enum class OptimizerKind { adam, sgd };

// Named-parameter optimizer over a ParameterStore. State is keyed by name.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, AdamConfig config) : kind_(kind), config_(config) { config_.validate(); }

  void step(ParameterStore& store, const std::vector<std::string>& names, const std::vector<Tensor<Real>>& grads);
  const AdamState* state(const std::string& name) const;
  OptimizerKind kind() const noexcept { return kind_; }

 private:
  OptimizerKind kind_;
  AdamConfig config_;
  std::unordered_map<std::string, AdamState> states_;
};

}  // namespace cll
