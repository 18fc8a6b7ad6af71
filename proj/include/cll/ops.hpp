#pragma once

#include <cstddef>

#include "cll/tape.hpp"
#include "cll/tensor.hpp"

// Differentiable operations recorded on a Tape. Each wraps a value kernel from
// kernels.hpp and registers the matching backward.
namespace cll::ops {

// How out-of-range blend coefficients are treated.
enum class AlphaPolicy {
  strict,       // alpha outside [0,1] is a RangeError
  clamp,        // clamp into [0,1] and log
  extrapolate,  // accept any finite alpha
};

// Validates alpha under the policy and returns the value to use.
double checked_alpha(double alpha, AlphaPolicy policy);

template <class T>
Var conv2d(Tape<T>& tape, Var input, Var weight, Var bias, std::size_t padding);

template <class T>
Var grouped_pointwise_conv(Tape<T>& tape, Var input, Var weight, Var bias, std::size_t groups);

// PReLU with a learnable scalar slope held in a (1,1,1,1) node.
template <class T>
Var prelu(Tape<T>& tape, Var input, Var slope);

// PReLU with a constant slope.
template <class T>
Var prelu(Tape<T>& tape, Var input, T slope);

template <class T>
Var blend(Tape<T>& tape, Var a, Var b, double alpha, AlphaPolicy policy = AlphaPolicy::strict);

// Per-pixel blend; map is a (1,1,H,W) node treated as a constant.
template <class T>
Var blend_map(Tape<T>& tape, Var a, Var b, Var map);

template <class T>
Var add(Tape<T>& tape, Var a, Var b);

template <class T>
Var channel_affine(Tape<T>& tape, Var x, Var scale, Var shift);

template <class T>
Var swap_nc(Tape<T>& tape, Var x);

// Mean squared error over all elements; result is (1,1,1,1).
template <class T>
Var loss_l2(Tape<T>& tape, Var pred, Var target);

// Mean absolute error; subgradient sign(pred - target) with sign(0) = 0.
template <class T>
Var loss_l1(Tape<T>& tape, Var pred, Var target);

// sum_i x_i * weights_i, a scalar projection used by gradient checks.
template <class T>
Var weighted_sum(Tape<T>& tape, Var x, const Tensor<T>& weights);

}  // namespace cll::ops
