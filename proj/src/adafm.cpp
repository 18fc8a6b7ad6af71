#include "cll/adafm.hpp"

#include "cll/kernels.hpp"

namespace cll {

template <class T>
FilterBank<T> adafm_effective_filters(const AdaFmLayer<T>& layer, const FilterBank<T>& bank,
                                      const Tensor<T>& second_bias, double alpha, ops::AlphaPolicy policy) {
  const T a = static_cast<T>(ops::checked_alpha(alpha, policy));
  if (layer.scale.shape() != Shape{bank.c_out(), 1, 1, 1}) {
    throw DimensionError("AdaFM layer for " + std::to_string(layer.scale.shape().n) +
                         " filters applied to a bank with " + std::to_string(bank.c_out()));
  }
  if (a == T(0)) return FilterBank<T>{bank.weights, kernels::blend(bank.bias, second_bias, a)};
  const Tensor<T> transformed = kernels::channel_affine(bank.weights, layer.scale, layer.shift);
  return FilterBank<T>{kernels::blend(bank.weights, transformed, a), kernels::blend(bank.bias, second_bias, a)};
}

template FilterBank<float> adafm_effective_filters(const AdaFmLayer<float>&, const FilterBank<float>&,
                                                   const Tensor<float>&, double, ops::AlphaPolicy);
template FilterBank<double> adafm_effective_filters(const AdaFmLayer<double>&, const FilterBank<double>&,
                                                    const Tensor<double>&, double, ops::AlphaPolicy);

}  // namespace cll
