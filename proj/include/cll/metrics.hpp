#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cll/data.hpp"
#include "cll/ftn.hpp"
#include "cll/model.hpp"
#include "cll/tensor.hpp"

namespace cll {

inline constexpr double kPsnrCap = 99.0;

// 10 log10(peak^2 / MSE) after clamping both tensors to [0, peak]; 99 dB when
// MSE < 1e-12.
double psnr(const Tensor<Real>& pred, const Tensor<Real>& target, double peak = 1.0);

// Mean of per-image PSNR over the leading axis.
double mean_psnr(const Tensor<Real>& pred, const Tensor<Real>& target, double peak = 1.0);

// Mean validation PSNR of the network at level `alpha` for noise `sigma`.
// Effective filters are materialised once, then images run in chunks.
double evaluate_psnr(const Network& net, const ValidationSet& val, double sigma, double alpha);

struct LayerSimilarity {
  std::size_t layer = 0;
  std::size_t weights = 0;      // element count of the bank
  double mae = 0.0;             // mean |a - b| over raw weights
  double cosine = 0.0;          // mean over filters with non-zero norm in both banks
  std::size_t filters = 0;      // filters averaged into cosine
  std::size_t zero_norm = 0;    // filters excluded for zero norm
};

struct SimilarityReport {
  std::vector<LayerSimilarity> layers;
  // Unweighted: plain mean over layers. Weighted: MAE by weight count, cosine
  // by filter count (equivalently, pooled over all elements / filters).
  double mae_unweighted = 0.0;
  double mae_weighted = 0.0;
  double cosine_unweighted = 0.0;
  double cosine_weighted = 0.0;
  std::size_t zero_norm = 0;
};

LayerSimilarity filter_similarity(const Tensor<Real>& a, const Tensor<Real>& b);
SimilarityReport filter_similarity(const std::vector<Tensor<Real>>& a, const std::vector<Tensor<Real>>& b);

// Base banks of `first` against the banks `second` uses at alpha = 1 (its
// transformed filters when providers are attached).
SimilarityReport network_similarity(const Network& first, const Network& second);

// K_H * K_W * C_in * (C_out / G) * N, the per-layer tuning cost as printed.
std::uint64_t macs_paper_ftn(std::uint64_t kh, std::uint64_t kw, std::uint64_t c_in, std::uint64_t c_out,
                             std::uint64_t groups, std::uint64_t depth);
// H * W * K_H * K_W * C_in * C_out.
std::uint64_t macs_feature_tuning(std::uint64_t h, std::uint64_t w, std::uint64_t kh, std::uint64_t kw,
                                  std::uint64_t c_in, std::uint64_t c_out);

struct MacsComponent {
  std::string name;
  std::uint64_t macs = 0;
  double overhead_pct = 0.0;
  std::size_t params = 0;
};

struct MacsReport {
  std::size_t height = 0;
  std::size_t width = 0;
  std::uint64_t baseline = 0;
  std::size_t baseline_params = 0;
  std::vector<MacsComponent> components;
  // Exact grouped 1x1 count is C_out / G times larger than the printed formula
  // under both axis readings; the flag records whether the two disagree.
  bool paper_formula_discrepancy = false;

  const MacsComponent& at(const std::string& name) const;
};

// Baseline: instrumented MACs of one plain forward pass over an H x W image.
// FTN rows: instrumented MACs spent producing the effective filters for one
// alpha (transform plus blend), once per image batch. Also the printed
// formula for the same FTN, an AdaFM cost model (3x3 depth-wise transition on
// every feature map except the last layer's) and a feature-map tuning model
// (one extra full convolution per layer).
MacsReport macs_instrumented(const NetworkSpec& spec, std::size_t height, std::size_t width,
                             const std::vector<std::size_t>& ftn_groups, std::size_t ftn_depth = 2);

// MACs of one instrumented forward pass over `images` at level alpha.
std::uint64_t forward_macs(const Network& net, const Tensor<Real>& images, double alpha);

struct SweepResult {
  std::vector<double> alphas;
  std::vector<double> sigmas;       // on the [0,1] scale
  std::vector<double> psnr;         // row-major [sigma][alpha]
  std::vector<double> argmax_alpha; // per sigma, first maximum
  std::vector<double> ideal_alpha;  // (sigma - low) / (high - low)
  double max_deviation = 0.0;       // max |argmax - ideal|

  double at(std::size_t sigma_index, std::size_t alpha_index) const {
    return psnr[sigma_index * alphas.size() + alpha_index];
  }
};

// alphas 0, step, ..., 1 inclusive, computed as i / n to avoid drift.
std::vector<double> alpha_grid(double step);

// Fills argmax_alpha, ideal_alpha and max_deviation from a complete grid.
void analyse_sweep(SweepResult& result, double sigma_low, double sigma_high);

// PSNR for every (sigma, alpha) cell. Cells are spread across worker_count()
// threads; each cell writes its own slot, so the result does not depend on
// scheduling.
SweepResult alpha_sweep(const Network& net, const ValidationSet& val, const std::vector<double>& sigmas,
                        double step, double sigma_low, double sigma_high);

void write_sweep_csv(std::ostream& os, const SweepResult& r);
// One row per layer, then the two aggregate rows (layer = all_unweighted, all_weighted).
void write_similarity_csv(std::ostream& os, const SimilarityReport& r);
void write_macs_csv(std::ostream& os, const MacsReport& r);

}  // namespace cll
