#include "cll/model.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "cll/kernels.hpp"

namespace cll {
namespace {

std::string conv_name(std::size_t i, const char* what) { return "conv" + std::to_string(i) + "." + what; }
std::string ftn_name(std::size_t i, const std::string& what) { return "ftn" + std::to_string(i) + "." + what; }
std::string adafm_name(std::size_t i, const char* what) { return "adafm" + std::to_string(i) + "." + what; }

std::vector<ConvLayerInfo> layer_table(const NetworkSpec& spec) {
  std::vector<ConvLayerInfo> layers;
  auto push = [&](std::size_t c_in, std::size_t c_out) {
    const std::size_t i = layers.size();
    layers.push_back(ConvLayerInfo{c_in, c_out, conv_name(i, "weight"), conv_name(i, "bias")});
  };
  push(spec.image_channels, spec.channels);
  for (std::size_t b = 0; b < spec.num_blocks; ++b) {
    push(spec.channels, spec.channels);
    push(spec.channels, spec.channels);
  }
  push(spec.channels, spec.image_channels);
  return layers;
}

bool layer_has_provider(const ProviderConfig& providers, std::size_t layer, std::size_t count) {
  const bool last = layer + 1 == count;
  switch (providers.mode) {
    case ProviderMode::plain:
      return false;
    case ProviderMode::ftn:
      return !(last && providers.exclude_last);
    case ProviderMode::adafm:
      return !last;
  }
  return false;
}

// Provider parameter (name, shape) pairs for one layer, in store order.
std::vector<std::pair<std::string, Shape>> provider_layout(const ProviderConfig& providers, std::size_t layer,
                                                           std::size_t c_out) {
  std::vector<std::pair<std::string, Shape>> out;
  const Shape vec{c_out, 1, 1, 1};
  if (providers.mode == ProviderMode::ftn) {
    const std::size_t g = providers.ftn.groups_for(c_out);
    for (std::size_t s = 0; s < providers.ftn.depth; ++s) {
      out.emplace_back(ftn_name(layer, "w" + std::to_string(s)), Shape{c_out, c_out / g, 1, 1});
      out.emplace_back(ftn_name(layer, "b" + std::to_string(s)), vec);
    }
    for (std::size_t s = 0; s + 1 < providers.ftn.depth; ++s) {
      out.emplace_back(ftn_name(layer, "slope" + std::to_string(s)), Shape{1, 1, 1, 1});
    }
    out.emplace_back(ftn_name(layer, "bias2"), vec);
  } else if (providers.mode == ProviderMode::adafm) {
    out.emplace_back(adafm_name(layer, "scale"), vec);
    out.emplace_back(adafm_name(layer, "shift"), vec);
    out.emplace_back(adafm_name(layer, "bias2"), vec);
  }
  return out;
}

std::string second_bias_name(const ProviderConfig& providers, std::size_t layer) {
  return providers.mode == ProviderMode::ftn ? ftn_name(layer, "bias2") : adafm_name(layer, "bias2");
}

}  // namespace

const char* to_string(ProviderMode mode) {
  switch (mode) {
    case ProviderMode::plain:
      return "plain";
    case ProviderMode::ftn:
      return "ftn";
    case ProviderMode::adafm:
      return "adafm";
  }
  return "unknown";
}

void NetworkSpec::validate() const {
  if (channels == 0) throw ConfigError("network channels must be positive");
  if (image_channels == 0) throw ConfigError("image channels must be positive");
  if (kernel_size == 0 || kernel_size % 2 == 0) {
    throw ConfigError("kernel size must be odd and positive, got " + std::to_string(kernel_size));
  }
}

// ---------------------------------------------------------------------------
// ParameterStore

void ParameterStore::add(std::string name, Tensor<Real> value) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ParameterStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

Tensor<Real>& ParameterStore::at(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].second;
}

const Tensor<Real>& ParameterStore::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].second;
}

void ParameterStore::remove_if(const std::function<bool(const std::string&)>& pred) {
  std::erase_if(entries_, [&](const auto& e) { return pred(e.first); });
  index_.clear();
  for (std::size_t i = 0; i < entries_.size(); ++i) index_.emplace(entries_[i].first, i);
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

std::uint64_t ParameterStore::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : entries_) {
    mix(name.data(), name.size());
    const std::uint64_t dims[4] = {t.shape().n, t.shape().c, t.shape().h, t.shape().w};
    mix(dims, sizeof(dims));
    mix(t.raw(), t.size() * sizeof(Real));
  }
  return h;
}

bool ParameterStore::bitwise_equal(const ParameterStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first) return false;
    if (!entries_[i].second.bitwise_equal(other.entries_[i].second)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// LevelMap

LevelMap LevelMap::constant(std::size_t height, std::size_t width, Real value) {
  LevelMap m{Tensor<Real>(Shape{1, 1, height, width}, value)};
  m.validate();
  return m;
}

LevelMap LevelMap::ramp(std::size_t height, std::size_t width) {
  LevelMap m{Tensor<Real>(Shape{1, 1, height, width})};
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      m.values.at(0, 0, y, x) = width > 1 ? static_cast<Real>(x) / static_cast<Real>(width - 1) : Real(0);
    }
  }
  return m;
}

void LevelMap::validate() const {
  const Shape& s = values.shape();
  if (s.n != 1 || s.c != 1) throw DimensionError("level map must be (1, 1, H, W), got " + s.str());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] >= Real(0) && values[i] <= Real(1))) {
      throw RangeError("level map entry " + std::to_string(i) + " outside [0, 1]");
    }
  }
}

// ---------------------------------------------------------------------------
// Network

Network::Network(NetworkSpec spec) : spec_(spec), layers_(layer_table(spec)) {}

Network Network::build(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Network net(spec);
  std::mt19937_64 rng(seed);
  const std::size_t k = spec.kernel_size;
  for (const auto& layer : net.layers_) {
    const std::size_t fan_in = layer.c_in * k * k;
    std::normal_distribution<double> normal(0.0, std::sqrt(1.0 / static_cast<double>(fan_in)));
    Tensor<Real> w(Shape{layer.c_out, layer.c_in, k, k});
    for (auto& v : w.data()) v = static_cast<Real>(normal(rng));
    net.store_.add(layer.weight, std::move(w));
    net.store_.add(layer.bias, Tensor<Real>(Shape{layer.c_out, 1, 1, 1}));
  }
  return net;
}

Network Network::from_parts(const NetworkSpec& spec, const ProviderConfig& providers, ParameterStore store) {
  spec.validate();
  if (providers.mode == ProviderMode::ftn) providers.ftn.validate();
  const auto layout = expected_layout(spec, providers);
  if (layout.size() != store.size()) {
    throw StoreMismatchError("parameter store has " + std::to_string(store.size()) + " entries, expected " +
                             std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& [name, tensor] = store.entries()[i];
    if (name != layout[i].first) {
      throw StoreMismatchError("parameter " + std::to_string(i) + " is '" + name + "', expected '" +
                               layout[i].first + "'");
    }
    if (tensor.shape() != layout[i].second) {
      throw DimensionError("parameter '" + name + "' has extents " + tensor.shape().str() + ", expected " +
                           layout[i].second.str());
    }
  }
  Network net(spec);
  net.providers_ = providers;
  net.store_ = std::move(store);
  return net;
}

std::vector<std::pair<std::string, Shape>> expected_layout(const NetworkSpec& spec, const ProviderConfig& providers) {
  std::vector<std::pair<std::string, Shape>> out;
  const auto layers = layer_table(spec);
  for (const auto& l : layers) {
    out.emplace_back(l.weight, Shape{l.c_out, l.c_in, spec.kernel_size, spec.kernel_size});
    out.emplace_back(l.bias, Shape{l.c_out, 1, 1, 1});
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layer_has_provider(providers, i, layers.size())) continue;
    for (auto& e : provider_layout(providers, i, layers[i].c_out)) out.push_back(std::move(e));
  }
  return out;
}

FilterBank<Real> Network::filter_bank(std::size_t layer) const {
  const auto& l = layers_.at(layer);
  return FilterBank<Real>{store_.at(l.weight), store_.at(l.bias)};
}

bool Network::has_provider(std::size_t layer) const {
  return layer_has_provider(providers_, layer, layers_.size());
}

std::size_t Network::provider_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) n += has_provider(i) ? 1 : 0;
  return n;
}

FtnLayer<Real> Network::ftn_layer(std::size_t layer) const {
  if (providers_.mode != ProviderMode::ftn || !has_provider(layer)) {
    throw ConfigError("layer " + std::to_string(layer) + " has no FTN attached");
  }
  FtnLayer<Real> f;
  f.channels = layers_.at(layer).c_out;
  f.groups = providers_.ftn.groups_for(f.channels);
  for (std::size_t s = 0; s < providers_.ftn.depth; ++s) {
    f.stage_weights.push_back(store_.at(ftn_name(layer, "w" + std::to_string(s))));
    f.stage_biases.push_back(store_.at(ftn_name(layer, "b" + std::to_string(s))));
    if (s + 1 < providers_.ftn.depth) f.slopes.push_back(store_.at(ftn_name(layer, "slope" + std::to_string(s))));
  }
  return f;
}

AdaFmLayer<Real> Network::adafm_layer(std::size_t layer) const {
  if (providers_.mode != ProviderMode::adafm || !has_provider(layer)) {
    throw ConfigError("layer " + std::to_string(layer) + " has no AdaFM transition attached");
  }
  return AdaFmLayer<Real>{store_.at(adafm_name(layer, "scale")), store_.at(adafm_name(layer, "shift"))};
}

const Tensor<Real>& Network::second_bias(std::size_t layer) const {
  if (!has_provider(layer)) throw ConfigError("layer " + std::to_string(layer) + " has no provider");
  return store_.at(second_bias_name(providers_, layer));
}

void Network::attach_ftn(const FtnConfig& config, bool exclude_last) {
  config.validate();
  detach_providers();
  providers_ = ProviderConfig{ProviderMode::ftn, config, exclude_last};
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!has_provider(i)) continue;
    const std::size_t c = layers_[i].c_out;
    const FtnLayer<Real> f = FtnLayer<Real>::identity(c, config.groups_for(c), config.depth);
    for (std::size_t s = 0; s < config.depth; ++s) {
      store_.add(ftn_name(i, "w" + std::to_string(s)), f.stage_weights[s]);
      store_.add(ftn_name(i, "b" + std::to_string(s)), f.stage_biases[s]);
    }
    for (std::size_t s = 0; s + 1 < config.depth; ++s) store_.add(ftn_name(i, "slope" + std::to_string(s)), f.slopes[s]);
    store_.add(ftn_name(i, "bias2"), store_.at(layers_[i].bias));
  }
}

void Network::attach_adafm() {
  detach_providers();
  providers_ = ProviderConfig{ProviderMode::adafm, FtnConfig{}, true};
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!has_provider(i)) continue;
    const auto a = AdaFmLayer<Real>::identity(layers_[i].c_out);
    store_.add(adafm_name(i, "scale"), a.scale);
    store_.add(adafm_name(i, "shift"), a.shift);
    store_.add(adafm_name(i, "bias2"), store_.at(layers_[i].bias));
  }
}

void Network::detach_providers() {
  store_.remove_if([](const std::string& name) { return !name.starts_with("conv"); });
  providers_ = ProviderConfig{};
}

std::vector<std::string> Network::collect_parameters(Phase phase) const {
  std::vector<std::string> names;
  for (const auto& [name, _] : store_.entries()) {
    const bool is_main = name.starts_with("conv");
    if ((phase == Phase::main) == is_main) names.push_back(name);
  }
  if (phase == Phase::tuning && names.empty()) {
    throw ConfigError("tuning phase requested but no providers are attached");
  }
  return names;
}

// ---------------------------------------------------------------------------
// Binding and forward

ParameterBinding::ParameterBinding(Tape<Real>& tape, const ParameterStore& store, std::span<const std::string> trainable)
    : tape_(tape), store_(store), trainable_(trainable.begin(), trainable.end()) {}

Var ParameterBinding::operator()(const std::string& name) {
  auto it = vars_.find(name);
  if (it != vars_.end()) return it->second;
  const Var v = tape_.leaf(store_.at(name), trainable_.contains(name));
  vars_.emplace(name, v);
  return v;
}

Tensor<Real> ParameterBinding::grad(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end() || !tape_.has_grad(it->second)) return Tensor<Real>(store_.at(name).shape());
  return tape_.grad(it->second);
}

namespace {

Var transformed_weights(Tape<Real>& tape, const Network& net, ParameterBinding& params, std::size_t layer) {
  const Var w = params(net.conv_layers()[layer].weight);
  if (net.providers().mode == ProviderMode::adafm) {
    return adafm_transform(tape, w, params(adafm_name(layer, "scale")), params(adafm_name(layer, "shift")));
  }
  const FtnConfig& cfg = net.providers().ftn;
  FtnVars vars;
  vars.groups = cfg.groups_for(net.conv_layers()[layer].c_out);
  for (std::size_t s = 0; s < cfg.depth; ++s) {
    vars.stage_weights.push_back(params(ftn_name(layer, "w" + std::to_string(s))));
    vars.stage_biases.push_back(params(ftn_name(layer, "b" + std::to_string(s))));
    if (s + 1 < cfg.depth) vars.slopes.push_back(params(ftn_name(layer, "slope" + std::to_string(s))));
  }
  return ftn_transform(tape, w, vars);
}

struct ForwardContext {
  Tape<Real>& tape;
  const Network& net;
  ParameterBinding& params;
  std::optional<double> alpha;
  Var map;
};

Var apply_conv(ForwardContext& ctx, std::size_t layer, Var x) {
  const auto& info = ctx.net.conv_layers()[layer];
  const std::size_t pad = ctx.net.spec().kernel_size / 2;
  const Var w = ctx.params(info.weight);
  const Var b = ctx.params(info.bias);
  if (!ctx.net.has_provider(layer) || (ctx.alpha && *ctx.alpha == 0.0)) {
    return ops::conv2d(ctx.tape, x, w, b, pad);
  }
  const Var wt = transformed_weights(ctx.tape, ctx.net, ctx.params, layer);
  const Var b2 = ctx.params(second_bias_name(ctx.net.providers(), layer));
  if (ctx.alpha) {
    const double a = *ctx.alpha;
    const Var we = ops::blend(ctx.tape, w, wt, a, ops::AlphaPolicy::extrapolate);
    const Var be = ops::blend(ctx.tape, b, b2, a, ops::AlphaPolicy::extrapolate);
    return ops::conv2d(ctx.tape, x, we, be, pad);
  }
  const Var y1 = ops::conv2d(ctx.tape, x, w, b, pad);
  const Var y2 = ops::conv2d(ctx.tape, x, wt, b2, pad);
  return ops::blend_map(ctx.tape, y1, y2, ctx.map);
}

}  // namespace

Var forward(Tape<Real>& tape, const Network& net, ParameterBinding& params, Var images, const BlendSpec& level) {
  const Shape& in = tape.value(images).shape();
  if (in.c != net.spec().image_channels) {
    throw DimensionError("forward: image has " + std::to_string(in.c) + " channels, network expects " +
                         std::to_string(net.spec().image_channels));
  }
  ForwardContext ctx{tape, net, params, std::nullopt, Var{}};
  if (const double* a = std::get_if<double>(&level)) {
    ctx.alpha = ops::checked_alpha(*a, net.alpha_policy);
  } else {
    const LevelMap& m = std::get<LevelMap>(level);
    m.validate();
    if (m.values.shape().h != in.h || m.values.shape().w != in.w) {
      throw DimensionError("forward: level map " + std::to_string(m.values.shape().h) + "x" +
                           std::to_string(m.values.shape().w) + " does not match image " + std::to_string(in.h) +
                           "x" + std::to_string(in.w));
    }
    ctx.map = tape.leaf(m.values);
  }

  std::size_t layer = 0;
  Var h = apply_conv(ctx, layer++, images);
  for (std::size_t b = 0; b < net.spec().num_blocks; ++b) {
    Var r = apply_conv(ctx, layer++, h);
    r = ops::prelu(tape, r, kMainPreluSlope);
    r = apply_conv(ctx, layer++, r);
    h = ops::add(tape, h, r);
  }
  const Var out = apply_conv(ctx, layer++, h);
  return ops::add(tape, images, out);
}

Tensor<Real> forward(const Network& net, const Tensor<Real>& images, const BlendSpec& level) {
  Tape<Real> tape;
  ParameterBinding params(tape, net.store());
  const Var out = forward(tape, net, params, tape.leaf(images), level);
  return tape.value(out);
}

FilterBank<Real> layer_effective_filters(const Network& net, std::size_t layer, double alpha) {
  const FilterBank<Real> base = net.filter_bank(layer);
  if (!net.has_provider(layer)) return base;
  const auto policy = net.alpha_policy;
  if (net.providers().mode == ProviderMode::adafm) {
    return adafm_effective_filters(net.adafm_layer(layer), base, net.second_bias(layer), alpha, policy);
  }
  return effective_filters(net.ftn_layer(layer), base, net.second_bias(layer), alpha, policy);
}

FilterBank<Real> layer_transformed_filters(const Network& net, std::size_t layer) {
  const FilterBank<Real> base = net.filter_bank(layer);
  if (!net.has_provider(layer)) return base;
  if (net.providers().mode == ProviderMode::adafm) {
    const auto a = net.adafm_layer(layer);
    return FilterBank<Real>{kernels::channel_affine(base.weights, a.scale, a.shift), net.second_bias(layer)};
  }
  return FilterBank<Real>{ftn_forward(net.ftn_layer(layer), base).weights, net.second_bias(layer)};
}

Network materialize(const Network& net, double alpha) {
  ParameterStore store;
  for (std::size_t i = 0; i < net.conv_count(); ++i) {
    FilterBank<Real> f = layer_effective_filters(net, i, alpha);
    store.add(net.conv_layers()[i].weight, std::move(f.weights));
    store.add(net.conv_layers()[i].bias, std::move(f.bias));
  }
  Network out = Network::from_parts(net.spec(), ProviderConfig{}, std::move(store));
  out.alpha_policy = net.alpha_policy;
  return out;
}

}  // namespace cll
