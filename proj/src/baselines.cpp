#include "cll/baselines.hpp"

#include "cll/kernels.hpp"

namespace cll {

void DniPair::validate() const {
  const auto& a = theta_a.entries();
  const auto& b = theta_b.entries();
  if (a.size() != b.size()) {
    throw StoreMismatchError("DNI stores hold " + std::to_string(a.size()) + " and " + std::to_string(b.size()) +
                             " entries");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first) {
      throw StoreMismatchError("DNI entry " + std::to_string(i) + " is '" + a[i].first + "' vs '" + b[i].first + "'");
    }
    if (a[i].second.shape() != b[i].second.shape()) {
      throw StoreMismatchError("DNI entry '" + a[i].first + "' has extents " + a[i].second.shape().str() + " vs " +
                               b[i].second.shape().str());
    }
  }
}

ParameterStore dni_interpolate(const DniPair& pair, double alpha, ops::AlphaPolicy policy) {
  pair.validate();
  const Real a = static_cast<Real>(ops::checked_alpha(alpha, policy));
  ParameterStore out;
  const auto& ea = pair.theta_a.entries();
  const auto& eb = pair.theta_b.entries();
  for (std::size_t i = 0; i < ea.size(); ++i) out.add(ea[i].first, kernels::blend(ea[i].second, eb[i].second, a));
  return out;
}

Network finetune_unconstrained(const Network& base, const SyntheticDataset& data, const ValidationSet& val,
                               const TrainConfig& config, std::size_t steps, PhaseResult* result,
                               const StepCallback& on_step) {
  Network net = base;
  net.detach_providers();
  const PhasePlan plan{"finetune", config.sigma_high, 0.0, steps, config.lr_phase2, config.steps_phase1};
  PhaseResult r = run_phase(net, net.collect_parameters(Phase::main), data, val, config, plan, on_step);
  if (result) *result = std::move(r);
  return net;
}

SweepResult dni_sweep(const Network& first, const Network& second, const ValidationSet& val,
                      const std::vector<double>& sigmas, double step, double sigma_low, double sigma_high) {
  if (first.provider_count() != 0 || second.provider_count() != 0) {
    throw ConfigError("DNI interpolates plain networks; detach providers first");
  }
  const DniPair pair{first.store(), second.store()};
  pair.validate();
  SweepResult r;
  r.alphas = alpha_grid(step);
  r.sigmas = sigmas;
  r.psnr.assign(sigmas.size() * r.alphas.size(), 0.0);
  for (std::size_t a = 0; a < r.alphas.size(); ++a) {
    const Network blended = Network::from_parts(first.spec(), ProviderConfig{}, dni_interpolate(pair, r.alphas[a]));
    for (std::size_t s = 0; s < sigmas.size(); ++s) {
      r.psnr[s * r.alphas.size() + a] = evaluate_psnr(blended, val, sigmas[s], 0.0);
    }
  }
  analyse_sweep(r, sigma_low, sigma_high);
  return r;
}

}  // namespace cll
