#pragma once

#include <cstddef>

#include "cll/tensor.hpp"

// Value-level forward/backward kernels. The tape in ops.hpp wires these into
// reverse-mode differentiation; they are also usable on their own.
//
// Conventions: filters are (C_out, C_in, K_H, K_W); biases are (C, 1, 1, 1).
// Convolution is cross-correlation, stride 1, zero padding.
namespace cll::kernels {

template <class T>
struct Conv2dGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                         std::size_t padding);

// Recomputes the im2col buffer from the saved input. Throws TapeError when the
// saved tensors are missing or inconsistent with grad_out.
template <class T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                               const Tensor<T>& weight, std::size_t padding);

// 1x1 convolution with `groups` channel groups. weight is (C, C/G, 1, 1):
// row c holds the coefficients over the C/G input channels of c's group.
template <class T>
Tensor<T> grouped_pointwise_forward(const Tensor<T>& input, const Tensor<T>& weight,
                                    const Tensor<T>& bias, std::size_t groups);

template <class T>
Conv2dGrads<T> grouped_pointwise_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                                          const Tensor<T>& weight, std::size_t groups);

// max(0,x) + slope*min(0,x). At x == 0 the positive branch is taken.
template <class T>
Tensor<T> prelu_forward(const Tensor<T>& input, T slope);

template <class T>
struct PreluGrads {
  Tensor<T> input;
  T slope = 0;
};

template <class T>
PreluGrads<T> prelu_backward(const Tensor<T>& grad_out, const Tensor<T>& input, T slope);

// (1-alpha)*a + alpha*b. alpha == 0 and alpha == 1 return exact copies.
template <class T>
Tensor<T> blend(const Tensor<T>& a, const Tensor<T>& b, T alpha);

// Per-pixel blend; `map` is (1, 1, H, W) and broadcasts over N and C.
template <class T>
Tensor<T> blend_map(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& map);

// out[c, ...] = scale[c] * x[c, ...] + shift[c]; scale/shift are (C, 1, 1, 1)
// and index the leading axis of x.
template <class T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift);

// Swaps the N and C axes.
template <class T>
Tensor<T> swap_nc(const Tensor<T>& x);

void require_groups(std::size_t channels, std::size_t groups);

}  // namespace cll::kernels
