#include "cll/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

#include "cll/kernels.hpp"
#include "cll/mac_counter.hpp"
#include "cll/runtime.hpp"

namespace cll {

double psnr(const Tensor<Real>& pred, const Tensor<Real>& target, double peak) {
  require_same_shape(pred.shape(), target.shape(), "psnr");
  if (!(peak > 0.0)) throw RangeError("psnr peak must be positive");
  if (pred.empty()) throw DimensionError("psnr of empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a = std::clamp(static_cast<double>(pred[i]), 0.0, peak);
    const double b = std::clamp(static_cast<double>(target[i]), 0.0, peak);
    acc += (a - b) * (a - b);
  }
  const double mse = acc / static_cast<double>(pred.size());
  if (mse < 1e-12) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

namespace {

Tensor<Real> slice_batch(const Tensor<Real>& x, std::size_t first, std::size_t count) {
  const Shape& s = x.shape();
  const std::size_t per = s.c * s.h * s.w;
  Tensor<Real> out(Shape{count, s.c, s.h, s.w});
  std::copy(x.raw() + first * per, x.raw() + (first + count) * per, out.raw());
  return out;
}

constexpr std::size_t kEvalChunk = 16;

// Mean per-image PSNR of an already materialised (plain) network.
double plain_mean_psnr(const Network& plain, const Tensor<Real>& noisy, const Tensor<Real>& clean) {
  const std::size_t n = noisy.shape().n;
  double total = 0.0;
  for (std::size_t first = 0; first < n; first += kEvalChunk) {
    const std::size_t count = std::min(kEvalChunk, n - first);
    const Tensor<Real> out = forward(plain, slice_batch(noisy, first, count), 0.0);
    const Tensor<Real> ref = slice_batch(clean, first, count);
    for (std::size_t i = 0; i < count; ++i) total += psnr(slice_batch(out, i, 1), slice_batch(ref, i, 1));
  }
  return total / static_cast<double>(n);
}

}  // namespace

double mean_psnr(const Tensor<Real>& pred, const Tensor<Real>& target, double peak) {
  require_same_shape(pred.shape(), target.shape(), "mean_psnr");
  const std::size_t n = pred.shape().n;
  if (n == 0) throw DimensionError("mean_psnr of an empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += psnr(slice_batch(pred, i, 1), slice_batch(target, i, 1), peak);
  return total / static_cast<double>(n);
}

double evaluate_psnr(const Network& net, const ValidationSet& val, double sigma, double alpha) {
  return plain_mean_psnr(materialize(net, alpha), val.noisy(sigma), val.clean);
}

// ---------------------------------------------------------------------------
// Filter similarity

LayerSimilarity filter_similarity(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a.shape(), b.shape(), "filter_similarity");
  LayerSimilarity r;
  r.weights = a.size();
  if (a.empty()) return r;
  double abs_sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) abs_sum += std::abs(static_cast<double>(a[i]) - b[i]);
  r.mae = abs_sum / static_cast<double>(a.size());

  const std::size_t filters = a.shape().n;
  const std::size_t len = a.size() / filters;
  double cos_sum = 0.0;
  for (std::size_t f = 0; f < filters; ++f) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = f * len; k < (f + 1) * len; ++k) {
      dot += static_cast<double>(a[k]) * b[k];
      na += static_cast<double>(a[k]) * a[k];
      nb += static_cast<double>(b[k]) * b[k];
    }
    if (na == 0.0 || nb == 0.0) {
      ++r.zero_norm;
      continue;
    }
    cos_sum += std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
    ++r.filters;
  }
  r.cosine = r.filters > 0 ? cos_sum / static_cast<double>(r.filters) : 0.0;
  return r;
}

SimilarityReport filter_similarity(const std::vector<Tensor<Real>>& a, const std::vector<Tensor<Real>>& b) {
  if (a.size() != b.size()) {
    throw DimensionError("filter_similarity: " + std::to_string(a.size()) + " banks vs " + std::to_string(b.size()));
  }
  SimilarityReport r;
  double mae_sum = 0.0, mae_pooled = 0.0, cos_sum = 0.0, cos_pooled = 0.0;
  std::size_t weights = 0, filters = 0, cos_layers = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    LayerSimilarity l = filter_similarity(a[i], b[i]);
    l.layer = i;
    mae_sum += l.mae;
    mae_pooled += l.mae * static_cast<double>(l.weights);
    weights += l.weights;
    if (l.filters > 0) {
      cos_sum += l.cosine;
      cos_pooled += l.cosine * static_cast<double>(l.filters);
      filters += l.filters;
      ++cos_layers;
    }
    r.zero_norm += l.zero_norm;
    r.layers.push_back(l);
  }
  if (!a.empty()) r.mae_unweighted = mae_sum / static_cast<double>(a.size());
  if (weights > 0) r.mae_weighted = mae_pooled / static_cast<double>(weights);
  if (cos_layers > 0) r.cosine_unweighted = cos_sum / static_cast<double>(cos_layers);
  if (filters > 0) r.cosine_weighted = cos_pooled / static_cast<double>(filters);
  return r;
}

SimilarityReport network_similarity(const Network& first, const Network& second) {
  if (!(first.spec() == second.spec())) throw StoreMismatchError("network_similarity: specs differ");
  std::vector<Tensor<Real>> a, b;
  for (std::size_t i = 0; i < first.conv_count(); ++i) {
    a.push_back(first.filter_bank(i).weights);
    b.push_back(layer_transformed_filters(second, i).weights);
  }
  return filter_similarity(a, b);
}

// ---------------------------------------------------------------------------
// MACs

std::uint64_t macs_paper_ftn(std::uint64_t kh, std::uint64_t kw, std::uint64_t c_in, std::uint64_t c_out,
                             std::uint64_t groups, std::uint64_t depth) {
  kernels::require_groups(c_out, groups);
  return kh * kw * c_in * (c_out / groups) * depth;
}

std::uint64_t macs_feature_tuning(std::uint64_t h, std::uint64_t w, std::uint64_t kh, std::uint64_t kw,
                                  std::uint64_t c_in, std::uint64_t c_out) {
  return h * w * kh * kw * c_in * c_out;
}

const MacsComponent& MacsReport::at(const std::string& name) const {
  for (const auto& c : components) {
    if (c.name == name) return c;
  }
  throw ConfigError("MACs report has no component '" + name + "'");
}

std::uint64_t forward_macs(const Network& net, const Tensor<Real>& images, double alpha) {
  MacCounter counter;
  MacScope scope(counter);
  forward(net, images, alpha);
  return counter.total();
}

namespace {

std::size_t tuning_parameter_count(const Network& net) {
  std::size_t n = 0;
  for (const auto& name : net.collect_parameters(Phase::tuning)) n += net.store().at(name).size();
  return n;
}

// MACs of producing every layer's effective filters once at an interior alpha.
MacCounter filter_transition_macs(const Network& net) {
  MacCounter counter;
  MacScope scope(counter);
  for (std::size_t i = 0; i < net.conv_count(); ++i) layer_effective_filters(net, i, 0.5);
  return counter;
}

}  // namespace

MacsReport macs_instrumented(const NetworkSpec& spec, std::size_t height, std::size_t width,
                             const std::vector<std::size_t>& ftn_groups, std::size_t ftn_depth) {
  if (height == 0 || width == 0) throw ConfigError("MACs image extent must be positive");
  MacsReport r;
  r.height = height;
  r.width = width;
  const Network plain = Network::build(spec, 0);
  r.baseline = forward_macs(plain, Tensor<Real>(Shape{1, spec.image_channels, height, width}), 0.0);
  r.baseline_params = plain.store().parameter_count();
  auto pct = [&](std::uint64_t m) { return 100.0 * static_cast<double>(m) / static_cast<double>(r.baseline); };
  const std::uint64_t k = spec.kernel_size;

  for (std::size_t g : ftn_groups) {
    Network net = plain;
    net.attach_ftn(FtnConfig{g, ftn_depth});
    const MacCounter exact = filter_transition_macs(net);
    std::uint64_t formula = 0;
    for (std::size_t i = 0; i < net.conv_count(); ++i) {
      if (!net.has_provider(i)) continue;
      const auto& l = net.conv_layers()[i];
      formula += macs_paper_ftn(k, k, l.c_in, l.c_out, net.providers().ftn.groups_for(l.c_out), ftn_depth);
    }
    if (exact.category("grouped_pointwise") != formula) r.paper_formula_discrepancy = true;
    std::string name = "ftn_g" + std::to_string(g);
    if (ftn_depth != 2) name += "_d" + std::to_string(ftn_depth);
    const std::size_t params = tuning_parameter_count(net);
    r.components.push_back(MacsComponent{name, exact.total(), pct(exact.total()), params});
    r.components.push_back(MacsComponent{name + "_paper_formula", formula, pct(formula), params});
  }

  {
    Network net = plain;
    net.attach_adafm();
    const MacCounter exact = filter_transition_macs(net);
    r.components.push_back(
        MacsComponent{"adafm_filter_exact", exact.total(), pct(exact.total()), tuning_parameter_count(net)});
  }

  // AdaFM as published: a K x K depth-wise convolution on each feature map,
  // every layer but the last.
  std::uint64_t adafm = 0, feature = 0;
  std::size_t adafm_params = 0, feature_params = 0;
  const auto& layers = plain.conv_layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i + 1 < layers.size()) {
      adafm += static_cast<std::uint64_t>(height) * width * layers[i].c_out * k * k;
      adafm_params += layers[i].c_out * (k * k + 1);
    }
    feature += macs_feature_tuning(height, width, k, k, layers[i].c_in, layers[i].c_out);
    feature_params += layers[i].c_out * (layers[i].c_in * k * k + 1);
  }
  r.components.push_back(MacsComponent{"adafm_cost_model", adafm, pct(adafm), adafm_params});
  r.components.push_back(MacsComponent{"feature_map_tuning", feature, pct(feature), feature_params});
  return r;
}

// ---------------------------------------------------------------------------
// Alpha sweep

std::vector<double> alpha_grid(double step) {
  if (!(step > 0.0) || step > 1.0) throw ConfigError("alpha grid step must lie in (0, 1]");
  const auto n = static_cast<std::size_t>(std::llround(1.0 / step));
  if (std::abs(static_cast<double>(n) * step - 1.0) > 1e-9) {
    throw ConfigError("alpha grid step must divide 1 evenly");
  }
  std::vector<double> grid(n + 1);
  for (std::size_t i = 0; i <= n; ++i) grid[i] = static_cast<double>(i) / static_cast<double>(n);
  return grid;
}

void analyse_sweep(SweepResult& r, double sigma_low, double sigma_high) {
  if (r.psnr.size() != r.alphas.size() * r.sigmas.size()) throw DimensionError("sweep grid is incomplete");
  if (!(sigma_high > sigma_low)) throw ConfigError("sweep needs sigma_high > sigma_low");
  r.argmax_alpha.assign(r.sigmas.size(), 0.0);
  r.ideal_alpha.assign(r.sigmas.size(), 0.0);
  r.max_deviation = 0.0;
  for (std::size_t s = 0; s < r.sigmas.size(); ++s) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < r.alphas.size(); ++a) {
      if (r.at(s, a) > r.at(s, best)) best = a;
    }
    r.argmax_alpha[s] = r.alphas[best];
    r.ideal_alpha[s] = (r.sigmas[s] - sigma_low) / (sigma_high - sigma_low);
    r.max_deviation = std::max(r.max_deviation, std::abs(r.argmax_alpha[s] - r.ideal_alpha[s]));
  }
}

SweepResult alpha_sweep(const Network& net, const ValidationSet& val, const std::vector<double>& sigmas,
                        double step, double sigma_low, double sigma_high) {
  SweepResult r;
  r.alphas = alpha_grid(step);
  r.sigmas = sigmas;
  r.psnr.assign(r.alphas.size() * sigmas.size(), 0.0);
  std::vector<Tensor<Real>> noisy;
  for (double s : sigmas) noisy.push_back(val.noisy(s));

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t a = next++; a < r.alphas.size(); a = next++) {
      try {
        const Network plain = materialize(net, r.alphas[a]);
        for (std::size_t s = 0; s < sigmas.size(); ++s) {
          r.psnr[s * r.alphas.size() + a] = plain_mean_psnr(plain, noisy[s], val.clean);
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min(worker_count(), r.alphas.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  analyse_sweep(r, sigma_low, sigma_high);
  return r;
}

// ---------------------------------------------------------------------------
// CSV

void write_sweep_csv(std::ostream& os, const SweepResult& r) {
  os << "alpha,sigma,psnr\n";
  char buf[96];
  for (std::size_t s = 0; s < r.sigmas.size(); ++s) {
    for (std::size_t a = 0; a < r.alphas.size(); ++a) {
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f,%.6f\n", r.alphas[a], r.sigmas[s] * 255.0, r.at(s, a));
      os << buf;
    }
  }
}

void write_similarity_csv(std::ostream& os, const SimilarityReport& r) {
  os << "layer,mae,cosine\n";
  char buf[96];
  for (const auto& l : r.layers) {
    std::snprintf(buf, sizeof(buf), "%zu,%.8f,%.8f\n", l.layer, l.mae, l.cosine);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "all_unweighted,%.8f,%.8f\n", r.mae_unweighted, r.cosine_unweighted);
  os << buf;
  std::snprintf(buf, sizeof(buf), "all_weighted,%.8f,%.8f\n", r.mae_weighted, r.cosine_weighted);
  os << buf;
}

void write_macs_csv(std::ostream& os, const MacsReport& r) {
  os << "component,macs,overhead_pct,params\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf), "baseline,%llu,%.6f,%zu\n", static_cast<unsigned long long>(r.baseline), 0.0,
                r.baseline_params);
  os << buf;
  for (const auto& c : r.components) {
    std::snprintf(buf, sizeof(buf), "%s,%llu,%.6f,%zu\n", c.name.c_str(), static_cast<unsigned long long>(c.macs),
                  c.overhead_pct, c.params);
    os << buf;
  }
}

}  // namespace cll
