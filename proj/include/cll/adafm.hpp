#pragma once

#include <cstddef>

#include "cll/ftn.hpp"
#include "cll/ops.hpp"
#include "cll/tape.hpp"
#include "cll/tensor.hpp"

namespace cll {

// AdaFM-style linear transition on filters: scale * f + shift, one scale and
// one shift per output filter (a depth-wise 1x1 transition).
template <class T>
struct AdaFmLayer {
  Tensor<T> scale;  // (C_out, 1, 1, 1)
  Tensor<T> shift;  // (C_out, 1, 1, 1)

  static AdaFmLayer identity(std::size_t channels) {
    return AdaFmLayer{Tensor<T>(Shape{channels, 1, 1, 1}, T(1)), Tensor<T>(Shape{channels, 1, 1, 1}, T(0))};
  }
};

template <class T>
Var adafm_transform(Tape<T>& tape, Var weights, Var scale, Var shift) {
  return ops::channel_affine(tape, weights, scale, shift);
}

// blend(f, scale * f + shift, alpha) for weights; bias blended with second_bias.
template <class T>
FilterBank<T> adafm_effective_filters(const AdaFmLayer<T>& layer, const FilterBank<T>& bank,
                                      const Tensor<T>& second_bias, double alpha,
                                      ops::AlphaPolicy policy = ops::AlphaPolicy::strict);

template <class T>
FilterBank<T> adafm_effective_filters(const AdaFmLayer<T>& layer, const FilterBank<T>& bank, double alpha,
                                      ops::AlphaPolicy policy = ops::AlphaPolicy::strict) {
  return adafm_effective_filters(layer, bank, bank.bias, alpha, policy);
}

}  // namespace cll
