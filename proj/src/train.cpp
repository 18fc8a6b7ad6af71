#include "cll/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "cll/metrics.hpp"

namespace cll {

const char* to_string(LossKind kind) { return kind == LossKind::l1 ? "l1" : "l2"; }

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (patch_size < 3) throw ConfigError("patch_size must be at least 3");
  if (validation_images == 0 || validation_size < 3) throw ConfigError("validation set must be non-empty");
  adam(lr_phase1).validate();
  adam(lr_phase2).validate();
  NoiseLevel{sigma_low}.validate();
  NoiseLevel{sigma_high}.validate();
}

Batch sample_batch(const SyntheticDataset& data, const TrainConfig& config, double sigma, std::uint64_t index) {
  return make_noisy(data, Stream::train, index * config.batch_size, config.batch_size, config.patch_size, sigma);
}

namespace {

Var apply_loss(Tape<Real>& tape, Var pred, Var target, LossKind loss) {
  return loss == LossKind::l1 ? ops::loss_l1(tape, pred, target) : ops::loss_l2(tape, pred, target);
}

}  // namespace

double batch_loss(const Network& net, const Batch& batch, double alpha, LossKind loss) {
  Tape<Real> tape;
  ParameterBinding params(tape, net.store());
  const Var out = forward(tape, net, params, tape.leaf(batch.noisy), alpha);
  return tape.value(apply_loss(tape, out, tape.leaf(batch.clean), loss))[0];
}

PhaseResult run_phase(Network& net, const std::vector<std::string>& trainable, const SyntheticDataset& data,
                      const ValidationSet& val, const TrainConfig& config, const PhasePlan& plan,
                      const StepCallback& on_step) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  PhaseResult result;
  result.name = plan.name;
  result.sigma = plan.sigma;
  result.alpha = plan.alpha;
  result.val_psnr_before = evaluate_psnr(net, val, plan.sigma, plan.alpha);

  Optimizer opt(config.optimizer, config.adam(plan.lr));
  result.losses.reserve(plan.steps);
  for (std::size_t step = 0; step < plan.steps; ++step) {
    const Batch batch = sample_batch(data, config, plan.sigma, plan.first_batch + step);
    Tape<Real> tape;
    ParameterBinding params(tape, net.store(), trainable);
    const Var out = forward(tape, net, params, tape.leaf(batch.noisy), plan.alpha);
    const Var loss = apply_loss(tape, out, tape.leaf(batch.clean), config.loss);
    const double value = tape.value(loss)[0];
    if (!std::isfinite(value)) {
      throw TrainingError(plan.name + ": loss became non-finite", step);
    }
    tape.backward(loss);
    std::vector<Tensor<Real>> grads;
    grads.reserve(trainable.size());
    for (const auto& name : trainable) grads.push_back(params.grad(name));
    try {
      opt.step(net.store(), trainable, grads);
    } catch (const NonFiniteError& e) {
      throw TrainingError(plan.name + ": " + e.what(), step);
    }
    result.losses.push_back(value);
    if (on_step) on_step(step, value);
  }

  result.val_psnr_after = evaluate_psnr(net, val, plan.sigma, plan.alpha);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

PhaseResult train_phase1(Network& net, const SyntheticDataset& data, const ValidationSet& val,
                         const TrainConfig& config, const StepCallback& on_step) {
  const PhasePlan plan{"phase1", config.sigma_low, 0.0, config.steps_phase1, config.lr_phase1, 0};
  return run_phase(net, net.collect_parameters(Phase::main), data, val, config, plan, on_step);
}

PhaseResult train_phase2(Network& net, const SyntheticDataset& data, const ValidationSet& val,
                         const TrainConfig& config, const StepCallback& on_step) {
  const auto trainable = net.collect_parameters(Phase::tuning);
  const PhasePlan plan{"phase2", config.sigma_high, 1.0, config.steps_phase2, config.lr_phase2,
                       config.steps_phase1};
  return run_phase(net, trainable, data, val, config, plan, on_step);
}

Network train_from_scratch(const NetworkSpec& spec, const SyntheticDataset& data, const ValidationSet& val,
                           const TrainConfig& config, PhaseResult* result, const StepCallback& on_step) {
  Network net = Network::build(spec, config.seed);
  const PhasePlan plan{"scratch", config.sigma_high, 0.0, config.steps_phase1 + config.steps_phase2,
                       config.lr_phase1, 0};
  PhaseResult r = run_phase(net, net.collect_parameters(Phase::main), data, val, config, plan, on_step);
  if (result) *result = std::move(r);
  return net;
}

void write_loss_csv(std::ostream& os, const PhaseResult& result) {
  os << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < result.losses.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", i, result.losses[i]);
    os << buf;
  }
}

}  // namespace cll
