#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

#include "cll/adafm.hpp"
#include "cll/ftn.hpp"
#include "cll/ops.hpp"
#include "cll/tape.hpp"
#include "cll/tensor.hpp"

namespace cll {

// Training precision of the network parameters.
using Real = float;

// head conv -> num_blocks x (conv -> PReLU -> conv, additive skip) -> tail conv,
// plus a global skip from input to output.
struct NetworkSpec {
  std::size_t channels = 16;
  std::size_t num_blocks = 4;
  std::size_t kernel_size = 3;
  std::size_t image_channels = 1;

  void validate() const;
  std::size_t conv_count() const noexcept { return 2 + 2 * num_blocks; }
  bool operator==(const NetworkSpec&) const = default;
};

// Fixed negative slope of the main network's activations.
inline constexpr Real kMainPreluSlope = 0.2f;

enum class ProviderMode : std::uint8_t { plain = 0, ftn = 1, adafm = 2 };

struct ProviderConfig {
  ProviderMode mode = ProviderMode::plain;
  FtnConfig ftn{};
  // Leave the final convolution without an FTN. AdaFM always skips it.
  bool exclude_last = false;

  bool operator==(const ProviderConfig& o) const {
    return mode == o.mode && ftn.groups == o.ftn.groups && ftn.depth == o.ftn.depth &&
           exclude_last == o.exclude_last;
  }
};

const char* to_string(ProviderMode mode);

enum class Phase { main, tuning };

// Ordered, uniquely named set of parameter tensors.
class ParameterStore {
 public:
  void add(std::string name, Tensor<Real> value);
  bool contains(std::string_view name) const;
  Tensor<Real>& at(std::string_view name);
  const Tensor<Real>& at(std::string_view name) const;
  void remove_if(const std::function<bool(const std::string&)>& pred);

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t parameter_count() const;
  const std::vector<std::pair<std::string, Tensor<Real>>>& entries() const noexcept { return entries_; }
  std::vector<std::pair<std::string, Tensor<Real>>>& entries() noexcept { return entries_; }

  // FNV-1a over names, extents and raw bytes.
  std::uint64_t hash() const;
  bool bitwise_equal(const ParameterStore& other) const;

 private:
  std::vector<std::pair<std::string, Tensor<Real>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Per-pixel blending coefficients, stored as (1, 1, H, W) with entries in [0,1].
struct LevelMap {
  Tensor<Real> values;

  static LevelMap constant(std::size_t height, std::size_t width, Real value);
  // 0 at the left edge rising linearly to 1 at the right edge.
  static LevelMap ramp(std::size_t height, std::size_t width);
  void validate() const;
};

// Global alpha or per-pixel level map.
using BlendSpec = std::variant<double, LevelMap>;

struct ConvLayerInfo {
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::string weight;
  std::string bias;
};

class Network {
 public:
  // Fan-in scaled normal init from a seeded generator; biases start at zero.
  static Network build(const NetworkSpec& spec, std::uint64_t seed);
  // Reassembles a network from stored parts; names and extents must match
  // what the spec and provider configuration imply.
  static Network from_parts(const NetworkSpec& spec, const ProviderConfig& providers, ParameterStore store);

  const NetworkSpec& spec() const noexcept { return spec_; }
  const ProviderConfig& providers() const noexcept { return providers_; }
  ParameterStore& store() noexcept { return store_; }
  const ParameterStore& store() const noexcept { return store_; }

  const std::vector<ConvLayerInfo>& conv_layers() const noexcept { return layers_; }
  std::size_t conv_count() const noexcept { return layers_.size(); }
  FilterBank<Real> filter_bank(std::size_t layer) const;

  bool has_provider(std::size_t layer) const;
  std::size_t provider_count() const;
  FtnLayer<Real> ftn_layer(std::size_t layer) const;
  AdaFmLayer<Real> adafm_layer(std::size_t layer) const;
  const Tensor<Real>& second_bias(std::size_t layer) const;

  // Attaches identity-initialised FTNs (second-level biases copied from the base).
  void attach_ftn(const FtnConfig& config, bool exclude_last = false);
  void attach_adafm();
  void detach_providers();

  // main: base filter banks only. tuning: provider parameters and second-level
  // biases. Throws ConfigError for tuning with no providers attached.
  std::vector<std::string> collect_parameters(Phase phase) const;

  ops::AlphaPolicy alpha_policy = ops::AlphaPolicy::strict;

 private:
  Network(NetworkSpec spec);

  NetworkSpec spec_;
  ProviderConfig providers_{};
  ParameterStore store_;
  std::vector<ConvLayerInfo> layers_;
};

// Names and extents a (spec, providers) pair implies, in store order.
std::vector<std::pair<std::string, Shape>> expected_layout(const NetworkSpec& spec,
                                                           const ProviderConfig& providers);

// Creates tape leaves for store entries on first use; entries listed as
// trainable require gradients.
class ParameterBinding {
 public:
  ParameterBinding(Tape<Real>& tape, const ParameterStore& store, std::span<const std::string> trainable = {});

  Var operator()(const std::string& name);
  // Gradient of a trainable entry after backward; zeros when it was unreached.
  Tensor<Real> grad(const std::string& name) const;

 private:
  Tape<Real>& tape_;
  const ParameterStore& store_;
  std::unordered_set<std::string> trainable_;
  std::unordered_map<std::string, Var> vars_;
};

// Differentiable forward through every convolution's effective filters.
Var forward(Tape<Real>& tape, const Network& net, ParameterBinding& params, Var images, const BlendSpec& level);

// Inference convenience wrapper.
Tensor<Real> forward(const Network& net, const Tensor<Real>& images, const BlendSpec& level);

// Effective filters of one layer at a global alpha (base bank when plain or alpha == 0).
FilterBank<Real> layer_effective_filters(const Network& net, std::size_t layer, double alpha);

// Transformed bank of one layer (alpha = 1 endpoint).
FilterBank<Real> layer_transformed_filters(const Network& net, std::size_t layer);

// Plain network whose filters are the effective filters at alpha, computed once.
Network materialize(const Network& net, double alpha);

}  // namespace cll
