#include "cll/optim.hpp"

#include <cmath>

namespace cll {

void AdamConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive, got " + std::to_string(lr));
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("Adam eps must be positive");
}

void adam_step(Tensor<Real>& param, const Tensor<Real>& grad, AdamState& state, const AdamConfig& config) {
  require_same_shape(param.shape(), grad.shape(), "adam_step");
  validate_finite(grad, "gradient");
  if (state.m.shape() != param.shape()) {
    state.m = Tensor<Real>(param.shape());
    state.v = Tensor<Real>(param.shape());
    state.t = 0;
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double m = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    const double v = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    state.m[i] = static_cast<Real>(m);
    state.v[i] = static_cast<Real>(v);
    const double update = config.lr * (m / c1) / (std::sqrt(v / c2) + config.eps);
    param[i] = static_cast<Real>(param[i] - update);
  }
}

void sgd_step(Tensor<Real>& param, const Tensor<Real>& grad, double lr) {
  require_same_shape(param.shape(), grad.shape(), "sgd_step");
  validate_finite(grad, "gradient");
  for (std::size_t i = 0; i < param.size(); ++i) param[i] = static_cast<Real>(param[i] - lr * grad[i]);
}

void Optimizer::step(ParameterStore& store, const std::vector<std::string>& names,
                     const std::vector<Tensor<Real>>& grads) {
  if (names.size() != grads.size()) throw DimensionError("optimizer: names and gradients differ in count");
  // Validate everything first so a bad gradient leaves the store untouched.
  for (std::size_t i = 0; i < grads.size(); ++i) validate_finite(grads[i], "gradient of " + names[i]);
  for (std::size_t i = 0; i < names.size(); ++i) {
    Tensor<Real>& p = store.at(names[i]);
    if (kind_ == OptimizerKind::sgd) {
      sgd_step(p, grads[i], config_.lr);
    } else {
      adam_step(p, grads[i], states_[names[i]], config_);
    }
  }
}

const AdamState* Optimizer::state(const std::string& name) const {
  auto it = states_.find(name);
  return it == states_.end() ? nullptr : &it->second;
}

}  // namespace cll
