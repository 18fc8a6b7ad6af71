#pragma once

#include "cll/data.hpp"
#include "cll/metrics.hpp"
#include "cll/model.hpp"
#include "cll/train.hpp"

namespace cll {

// Two complete parameter stores of one topology: the first-level network and
// an unconstrained fine-tuned copy of it.
struct DniPair {
  ParameterStore theta_a;
  ParameterStore theta_b;

  // Throws StoreMismatchError naming the first differing entry.
  void validate() const;
};

// Every parameter blended with the same alpha. alpha 0 and 1 return the
// endpoints bit for bit.
ParameterStore dni_interpolate(const DniPair& pair, double alpha, ops::AlphaPolicy policy = ops::AlphaPolicy::strict);

// Copies `base` without providers and trains every parameter at sigma_high
// with the phase-2 optimizer settings and batches, for `steps` steps.
Network finetune_unconstrained(const Network& base, const SyntheticDataset& data, const ValidationSet& val,
                               const TrainConfig& config, std::size_t steps, PhaseResult* result = nullptr,
                               const StepCallback& on_step = {});

// PSNR grid of the DNI family: every alpha on the grid blends the two
// plain networks' parameters, then each sigma is evaluated.
SweepResult dni_sweep(const Network& first, const Network& second, const ValidationSet& val,
                      const std::vector<double>& sigmas, double step, double sigma_low, double sigma_high);

}  // namespace cll
