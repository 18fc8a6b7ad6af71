#include "cll/ftn.hpp"

#include <numeric>

#include "cll/kernels.hpp"

namespace cll {

template <class T>
void FilterBank<T>::validate() const {
  const Shape& s = weights.shape();
  if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0) {
    throw DimensionError("filter bank extents must be positive, got " + s.str());
  }
  if (s.h % 2 == 0 || s.w % 2 == 0) throw DimensionError("filter bank kernel must be odd, got " + s.str());
  if (bias.shape() != Shape{s.n, 1, 1, 1}) {
    throw DimensionError("filter bank bias " + bias.shape().str() + " does not match C_out " +
                         std::to_string(s.n));
  }
  validate_finite(weights, "filter bank weights");
  validate_finite(bias, "filter bank bias");
}

void FtnConfig::validate() const {
  if (groups == 0) throw ConfigError("FTN group count must be positive");
  if (depth < 2) throw ConfigError("FTN depth must be at least 2, got " + std::to_string(depth));
}

std::size_t FtnConfig::groups_for(std::size_t c_out) const { return std::gcd(groups, c_out); }

template <class T>
std::size_t FtnLayer<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& w : stage_weights) n += w.size();
  for (const auto& b : stage_biases) n += b.size();
  for (const auto& a : slopes) n += a.size();
  return n;
}

template <class T>
FtnLayer<T> FtnLayer<T>::identity(std::size_t channels, std::size_t groups, std::size_t depth) {
  FtnConfig{groups, depth}.validate();
  kernels::require_groups(channels, groups);
  FtnLayer layer;
  layer.channels = channels;
  layer.groups = groups;
  const std::size_t per_group = channels / groups;
  for (std::size_t s = 0; s < depth; ++s) {
    layer.stage_weights.emplace_back(Shape{channels, per_group, 1, 1});
    layer.stage_biases.emplace_back(Shape{channels, 1, 1, 1});
    if (s + 1 < depth) layer.slopes.emplace_back(Shape{1, 1, 1, 1});
  }
  identity_init(layer);
  return layer;
}

template <class T>
void identity_init(FtnLayer<T>& layer) {
  const std::size_t per_group = layer.channels / layer.groups;
  for (auto& w : layer.stage_weights) {
    w.fill(T(0));
    // Row c picks input channel c, which sits at offset c % per_group in its group.
    for (std::size_t c = 0; c < layer.channels; ++c) w[c * per_group + c % per_group] = T(1);
  }
  for (auto& b : layer.stage_biases) b.fill(T(0));
  for (auto& a : layer.slopes) a.fill(T(1));
}

template <class T>
FtnVars bind_ftn(Tape<T>& tape, const FtnLayer<T>& layer, bool requires_grad) {
  FtnVars vars;
  vars.groups = layer.groups;
  for (const auto& w : layer.stage_weights) vars.stage_weights.push_back(tape.leaf(w, requires_grad));
  for (const auto& b : layer.stage_biases) vars.stage_biases.push_back(tape.leaf(b, requires_grad));
  for (const auto& a : layer.slopes) vars.slopes.push_back(tape.leaf(a, requires_grad));
  return vars;
}

template <class T>
Var ftn_transform(Tape<T>& tape, Var weights, const FtnVars& vars) {
  const std::size_t depth = vars.stage_weights.size();
  if (depth < 2 || vars.stage_biases.size() != depth || vars.slopes.size() + 1 != depth) {
    throw ConfigError("FTN parameter set is inconsistent with its depth");
  }
  kernels::require_groups(tape.value(weights).shape().n, vars.groups);
  // (C_out, C_in, K, K) -> (C_in, C_out, K, K): C_in slices become samples.
  Var x = ops::swap_nc(tape, weights);
  for (std::size_t s = 0; s < depth; ++s) {
    x = ops::grouped_pointwise_conv(tape, x, vars.stage_weights[s], vars.stage_biases[s], vars.groups);
    if (s + 1 < depth) x = ops::prelu(tape, x, vars.slopes[s]);
  }
  return ops::swap_nc(tape, x);
}

template <class T>
FilterBank<T> ftn_forward(const FtnLayer<T>& layer, const FilterBank<T>& bank) {
  if (bank.c_out() != layer.channels) {
    throw DimensionError("FTN built for " + std::to_string(layer.channels) + " filters applied to a bank with " +
                         std::to_string(bank.c_out()));
  }
  Tape<T> tape;
  const FtnVars vars = bind_ftn(tape, layer, false);
  const Var out = ftn_transform(tape, tape.leaf(bank.weights), vars);
  return FilterBank<T>{tape.value(out), bank.bias};
}

template <class T>
FilterBank<T> effective_filters(const FtnLayer<T>& layer, const FilterBank<T>& bank,
                                const Tensor<T>& second_bias, double alpha, ops::AlphaPolicy policy) {
  const T a = static_cast<T>(ops::checked_alpha(alpha, policy));
  if (a == T(0)) return FilterBank<T>{bank.weights, kernels::blend(bank.bias, second_bias, a)};
  const FilterBank<T> transformed = ftn_forward(layer, bank);
  return FilterBank<T>{kernels::blend(bank.weights, transformed.weights, a),
                       kernels::blend(bank.bias, second_bias, a)};
}

template <class T>
FilterBank<T> effective_filters(const FtnLayer<T>& layer, const FilterBank<T>& bank, double alpha,
                                ops::AlphaPolicy policy) {
  return effective_filters(layer, bank, bank.bias, alpha, policy);
}

#define CLL_INSTANTIATE_FTN(T)                                                                      \
  template struct FilterBank<T>;                                                                    \
  template struct FtnLayer<T>;                                                                      \
  template void identity_init(FtnLayer<T>&);                                                        \
  template FtnVars bind_ftn(Tape<T>&, const FtnLayer<T>&, bool);                                    \
  template Var ftn_transform(Tape<T>&, Var, const FtnVars&);                                        \
  template FilterBank<T> ftn_forward(const FtnLayer<T>&, const FilterBank<T>&);                     \
  template FilterBank<T> effective_filters(const FtnLayer<T>&, const FilterBank<T>&, const Tensor<T>&, \
                                           double, ops::AlphaPolicy);                               \
  template FilterBank<T> effective_filters(const FtnLayer<T>&, const FilterBank<T>&, double,        \
                                           ops::AlphaPolicy);

CLL_INSTANTIATE_FTN(float)
CLL_INSTANTIATE_FTN(double)

#undef CLL_INSTANTIATE_FTN

}  // namespace cll
