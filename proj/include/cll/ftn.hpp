#pragma once

#include <cstddef>
#include <vector>

#include "cll/ops.hpp"
#include "cll/tape.hpp"
#include "cll/tensor.hpp"

namespace cll {

// Convolution weights (C_out, C_in, K_H, K_W) and bias (C_out, 1, 1, 1) of one layer.
template <class T>
struct FilterBank {
  Tensor<T> weights;
  Tensor<T> bias;

  std::size_t c_out() const noexcept { return weights.shape().n; }
  std::size_t c_in() const noexcept { return weights.shape().c; }
  void validate() const;
};

struct FtnConfig {
  std::size_t groups = 1;
  // Number of grouped 1x1 stages; depth - 1 PReLUs sit between them.
  std::size_t depth = 2;

  void validate() const;
  // Group count used for a layer with `c_out` filters. Layers whose filter
  // count is not a multiple of `groups` fall back to gcd(groups, c_out).
  std::size_t groups_for(std::size_t c_out) const;
};

// Filter transition module attached to one convolution. Each stage is a
// grouped 1x1 convolution over the filter-index (C_out) axis, with the C_in
// slices of the bank treated as independent samples of spatial size K_H x K_W.
template <class T>
struct FtnLayer {
  std::size_t channels = 0;
  std::size_t groups = 1;
  std::vector<Tensor<T>> stage_weights;  // depth x (C, C/G, 1, 1)
  std::vector<Tensor<T>> stage_biases;   // depth x (C, 1, 1, 1)
  std::vector<Tensor<T>> slopes;         // (depth - 1) x (1, 1, 1, 1)

  std::size_t depth() const noexcept { return stage_weights.size(); }
  std::size_t parameter_count() const;

  // Exact identity on any filter bank: per-group identity weights, zero
  // biases, unit PReLU slopes.
  static FtnLayer identity(std::size_t channels, std::size_t groups, std::size_t depth);
};

template <class T>
void identity_init(FtnLayer<T>& layer);

// Tape handles for one FtnLayer's parameters.
struct FtnVars {
  std::size_t groups = 1;
  std::vector<Var> stage_weights;
  std::vector<Var> stage_biases;
  std::vector<Var> slopes;
};

template <class T>
FtnVars bind_ftn(Tape<T>& tape, const FtnLayer<T>& layer, bool requires_grad);

// FTN(weights) on the tape; input and output are (C_out, C_in, K_H, K_W).
template <class T>
Var ftn_transform(Tape<T>& tape, Var weights, const FtnVars& vars);

// Transformed bank. The bias passes through untouched.
template <class T>
FilterBank<T> ftn_forward(const FtnLayer<T>& layer, const FilterBank<T>& bank);

// (1-alpha) * f + alpha * FTN(f) for the weights and (1-alpha) * bias + alpha *
// second_bias for the bias.
template <class T>
FilterBank<T> effective_filters(const FtnLayer<T>& layer, const FilterBank<T>& bank,
                                const Tensor<T>& second_bias, double alpha,
                                ops::AlphaPolicy policy = ops::AlphaPolicy::strict);

// Same, with the second-level bias equal to the base bias.
template <class T>
FilterBank<T> effective_filters(const FtnLayer<T>& layer, const FilterBank<T>& bank, double alpha,
                                ops::AlphaPolicy policy = ops::AlphaPolicy::strict);

}  // namespace cll
