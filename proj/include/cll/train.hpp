#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "cll/data.hpp"
#include "cll/model.hpp"
#include "cll/optim.hpp"

namespace cll {

enum class LossKind { l1, l2 };

const char* to_string(LossKind kind);

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t batch_size = 16;
  std::size_t patch_size = 32;
  std::size_t steps_phase1 = 3000;
  std::size_t steps_phase2 = 1500;
  double lr_phase1 = 1e-3;
  double lr_phase2 = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LossKind loss = LossKind::l2;
  OptimizerKind optimizer = OptimizerKind::adam;
  double sigma_low = 20.0 / 255.0;
  double sigma_high = 80.0 / 255.0;
  std::size_t validation_images = 32;
  std::size_t validation_size = 48;

  void validate() const;
  AdamConfig adam(double lr) const { return AdamConfig{lr, beta1, beta2, eps}; }
};

// Batch `index` of the training stream: samples [index * B, (index + 1) * B).
Batch sample_batch(const SyntheticDataset& data, const TrainConfig& config, double sigma, std::uint64_t index);

struct PhaseResult {
  std::string name;
  std::vector<double> losses;  // one per step, before that step's update
  double sigma = 0.0;
  double alpha = 0.0;
  double val_psnr_before = 0.0;
  double val_psnr_after = 0.0;
  double seconds = 0.0;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

struct PhasePlan {
  std::string name;
  double sigma = 0.0;
  double alpha = 0.0;
  std::size_t steps = 0;
  double lr = 1e-3;
  std::uint64_t first_batch = 0;
};

// Trains exactly the named parameters for plan.steps steps; everything else
// stays bitwise untouched. A non-finite loss or gradient raises
// TrainingError carrying the step index.
PhaseResult run_phase(Network& net, const std::vector<std::string>& trainable, const SyntheticDataset& data,
                      const ValidationSet& val, const TrainConfig& config, const PhasePlan& plan,
                      const StepCallback& on_step = {});

// Loss of the network at `level` on one batch, without any update.
double batch_loss(const Network& net, const Batch& batch, double alpha, LossKind loss);

// Main filters at sigma_low, alpha = 0, batches [0, steps_phase1).
PhaseResult train_phase1(Network& net, const SyntheticDataset& data, const ValidationSet& val,
                         const TrainConfig& config, const StepCallback& on_step = {});

// Provider parameters only, at sigma_high, alpha = 1, batches
// [steps_phase1, steps_phase1 + steps_phase2). Throws ConfigError without providers.
PhaseResult train_phase2(Network& net, const SyntheticDataset& data, const ValidationSet& val,
                         const TrainConfig& config, const StepCallback& on_step = {});

// Fresh network (same init seed) trained at sigma_high over the combined
// budget steps_phase1 + steps_phase2, on batches [0, total).
Network train_from_scratch(const NetworkSpec& spec, const SyntheticDataset& data, const ValidationSet& val,
                           const TrainConfig& config, PhaseResult* result = nullptr,
                           const StepCallback& on_step = {});

void write_loss_csv(std::ostream& os, const PhaseResult& result);

}  // namespace cll
