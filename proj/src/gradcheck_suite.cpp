#include <algorithm>
#include <cmath>
#include <random>

#include "cll/ftn.hpp"
#include "cll/gradcheck.hpp"
#include "cll/kernels.hpp"
#include "cll/ops.hpp"

namespace cll {
namespace {

using Rng = std::mt19937_64;
using D = double;

Tensor<D> uniform(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<D> t(s);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Shape random_shape(Rng& rng) { return Shape{pick(rng, 1, 2), pick(rng, 1, 8), pick(rng, 1, 8), pick(rng, 1, 8)}; }

void fold(OpGradReport& report, const GradCheckResult& r) {
  report.worst_rel_error = std::max(report.worst_rel_error, r.max_rel_error);
  report.coordinates += r.checked;
  report.excluded += r.excluded;
  ++report.instances;
}

double min_abs(const Tensor<D>& t) {
  double m = INFINITY;
  for (double v : t.data()) m = std::min(m, std::abs(v));
  return m;
}

// Random FTN parameters away from the identity, with slopes off 1 so the
// PReLUs are genuinely non-linear.
FtnLayer<D> random_ftn(Rng& rng, std::size_t channels, std::size_t groups, std::size_t depth) {
  FtnLayer<D> layer = FtnLayer<D>::identity(channels, groups, depth);
  std::uniform_real_distribution<double> jitter(-0.4, 0.4);
  std::uniform_real_distribution<double> slope(0.1, 0.9);
  for (auto& w : layer.stage_weights)
    for (auto& v : w.data()) v += jitter(rng);
  for (auto& b : layer.stage_biases)
    for (auto& v : b.data()) v = 0.25 * jitter(rng);
  for (auto& a : layer.slopes) a[0] = slope(rng);
  return layer;
}

// Smallest |pre-activation| seen by any FTN PReLU for this bank.
double ftn_kink_distance(const FtnLayer<D>& layer, const Tensor<D>& weights) {
  Tensor<D> x = kernels::swap_nc(weights);
  double margin = INFINITY;
  for (std::size_t s = 0; s < layer.depth(); ++s) {
    x = kernels::grouped_pointwise_forward(x, layer.stage_weights[s], layer.stage_biases[s], layer.groups);
    if (s + 1 < layer.depth()) {
      margin = std::min(margin, min_abs(x));
      x = kernels::prelu_forward(x, layer.slopes[s][0]);
    }
  }
  return margin;
}

}  // namespace

std::vector<OpGradReport> run_gradient_suite(std::uint64_t seed, std::size_t instances, double epsilon) {
  Rng rng(seed);
  const double kink_margin = 10.0 * epsilon;
  std::vector<OpGradReport> reports;
  auto add_report = [&](const char* name) -> OpGradReport& {
    reports.push_back(OpGradReport{name});
    return reports.back();
  };

  {
    OpGradReport& rep = add_report("conv2d");
    for (std::size_t i = 0; i < instances; ++i) {
      const std::size_t k = pick(rng, 0, 1) == 0 ? 1 : 3;
      Shape xs = random_shape(rng);
      const std::size_t c_out = pick(rng, 1, 8);
      const Tensor<D> r = uniform(Shape{xs.n, c_out, xs.h, xs.w}, rng);
      std::vector<Tensor<D>> point{uniform(xs, rng), uniform(Shape{c_out, xs.c, k, k}, rng),
                                   uniform(Shape{c_out, 1, 1, 1}, rng)};
      fold(rep, grad_check(
                    [&](Tape<D>& t, std::span<const Var> v) {
                      return ops::weighted_sum(t, ops::conv2d(t, v[0], v[1], v[2], k / 2), r);
                    },
                    point, epsilon));
    }
  }
  {
    OpGradReport& rep = add_report("grouped_pointwise_conv");
    for (std::size_t i = 0; i < instances; ++i) {
      Shape xs = random_shape(rng);
      std::vector<std::size_t> divisors;
      for (std::size_t g = 1; g <= xs.c; ++g)
        if (xs.c % g == 0) divisors.push_back(g);
      const std::size_t groups = divisors[pick(rng, 0, divisors.size() - 1)];
      const Tensor<D> r = uniform(xs, rng);
      std::vector<Tensor<D>> point{uniform(xs, rng), uniform(Shape{xs.c, xs.c / groups, 1, 1}, rng),
                                   uniform(Shape{xs.c, 1, 1, 1}, rng)};
      fold(rep, grad_check(
                    [&](Tape<D>& t, std::span<const Var> v) {
                      return ops::weighted_sum(t, ops::grouped_pointwise_conv(t, v[0], v[1], v[2], groups), r);
                    },
                    point, epsilon));
    }
  }
  {
    OpGradReport& rep = add_report("prelu");
    for (std::size_t i = 0; i < instances; ++i) {
      Shape xs = random_shape(rng);
      const Tensor<D> r = uniform(xs, rng);
      std::vector<Tensor<D>> point{uniform(xs, rng), uniform(Shape{1, 1, 1, 1}, rng, 0.05, 0.95)};
      const Tensor<D> x0 = point[0];
      fold(rep, grad_check(
                    [&](Tape<D>& t, std::span<const Var> v) {
                      return ops::weighted_sum(t, ops::prelu(t, v[0], v[1]), r);
                    },
                    point, epsilon,
                    [&](std::size_t input, std::size_t idx) {
                      return input == 0 && std::abs(x0[idx]) < kink_margin;
                    }));
    }
  }
  {
    OpGradReport& rep = add_report("blend");
    std::uniform_real_distribution<double> alpha(0.0, 1.0);
    for (std::size_t i = 0; i < instances; ++i) {
      Shape xs = random_shape(rng);
      const double a = alpha(rng);
      const Tensor<D> r = uniform(xs, rng);
      std::vector<Tensor<D>> point{uniform(xs, rng), uniform(xs, rng)};
      fold(rep, grad_check(
                    [&](Tape<D>& t, std::span<const Var> v) {
                      return ops::weighted_sum(t, ops::blend(t, v[0], v[1], a), r);
                    },
                    point, epsilon));
    }
  }
  {
    OpGradReport& rep = add_report("blend_map");
    for (std::size_t i = 0; i < instances; ++i) {
      Shape xs = random_shape(rng);
      const Tensor<D> map = uniform(Shape{1, 1, xs.h, xs.w}, rng, 0.0, 1.0);
      const Tensor<D> r = uniform(xs, rng);
      std::vector<Tensor<D>> point{uniform(xs, rng), uniform(xs, rng)};
      fold(rep, grad_check(
                    [&](Tape<D>& t, std::span<const Var> v) {
                      return ops::weighted_sum(t, ops::blend_map(t, v[0], v[1], t.leaf(map)), r);
                    },
                    point, epsilon));
    }
  }
  {
    OpGradReport& rep = add_report("add");
    for (std::size_t i = 0; i < instances; ++i) {
      Shape xs = random_shape(rng);
      const Tensor<D> r = uniform(xs, rng);
      std::vector<Tensor<D>> point{uniform(xs, rng), uniform(xs, rng)};
      fold(rep, grad_check(
                    [&](Tape<D>& t, std::span<const Var> v) { return ops::weighted_sum(t, ops::add(t, v[0], v[1]), r); },
                    point, epsilon));
    }
  }
  {
    OpGradReport& rep = add_report("channel_affine");
    for (std::size_t i = 0; i < instances; ++i) {
      Shape xs = random_shape(rng);
      const Tensor<D> r = uniform(xs, rng);
      std::vector<Tensor<D>> point{uniform(xs, rng), uniform(Shape{xs.n, 1, 1, 1}, rng),
                                   uniform(Shape{xs.n, 1, 1, 1}, rng)};
      fold(rep, grad_check(
                    [&](Tape<D>& t, std::span<const Var> v) {
                      return ops::weighted_sum(t, ops::channel_affine(t, v[0], v[1], v[2]), r);
                    },
                    point, epsilon));
    }
  }
  {
    OpGradReport& rep = add_report("swap_nc");
    for (std::size_t i = 0; i < instances; ++i) {
      Shape xs = random_shape(rng);
      const Tensor<D> r = uniform(Shape{xs.c, xs.n, xs.h, xs.w}, rng);
      std::vector<Tensor<D>> point{uniform(xs, rng)};
      fold(rep, grad_check(
                    [&](Tape<D>& t, std::span<const Var> v) { return ops::weighted_sum(t, ops::swap_nc(t, v[0]), r); },
                    point, epsilon));
    }
  }
  {
    OpGradReport& rep = add_report("loss_l2");
    for (std::size_t i = 0; i < instances; ++i) {
      Shape xs = random_shape(rng);
      std::vector<Tensor<D>> point{uniform(xs, rng), uniform(xs, rng)};
      fold(rep, grad_check([&](Tape<D>& t, std::span<const Var> v) { return ops::loss_l2(t, v[0], v[1]); }, point, epsilon));
    }
  }
  {
    OpGradReport& rep = add_report("loss_l1");
    for (std::size_t i = 0; i < instances; ++i) {
      Shape xs = random_shape(rng);
      std::vector<Tensor<D>> point{uniform(xs, rng), uniform(xs, rng)};
      const Tensor<D> p0 = point[0];
      const Tensor<D> q0 = point[1];
      fold(rep, grad_check([&](Tape<D>& t, std::span<const Var> v) { return ops::loss_l1(t, v[0], v[1]); }, point,
                           epsilon,
                           [&](std::size_t, std::size_t idx) { return std::abs(p0[idx] - q0[idx]) < kink_margin; }));
    }
  }
  {
    // Full FTN-wrapped convolution: X * blend(f, FTN(f), alpha) with blended bias.
    OpGradReport& rep = add_report("ftn_wrapped_conv");
    constexpr std::size_t kChannels = 8;
    const std::size_t group_choices[] = {1, 2, 4, 8};
    std::uniform_real_distribution<double> alpha_dist(0.05, 0.95);
    for (std::size_t i = 0; i < instances; ++i) {
      const std::size_t groups = group_choices[pick(rng, 0, 3)];
      const std::size_t depth = pick(rng, 2, 3);
      const std::size_t c_in = pick(rng, 1, 8);
      const Shape xs{pick(rng, 1, 2), c_in, pick(rng, 3, 8), pick(rng, 3, 8)};
      FtnLayer<D> ftn;
      Tensor<D> weights;
      do {
        ftn = random_ftn(rng, kChannels, groups, depth);
        weights = uniform(Shape{kChannels, c_in, 3, 3}, rng);
      } while (ftn_kink_distance(ftn, weights) < kink_margin);
      const double a = alpha_dist(rng);
      const Tensor<D> r = uniform(Shape{xs.n, kChannels, xs.h, xs.w}, rng);

      std::vector<Tensor<D>> point{uniform(xs, rng), weights, uniform(Shape{kChannels, 1, 1, 1}, rng),
                                   uniform(Shape{kChannels, 1, 1, 1}, rng)};
      for (const auto& w : ftn.stage_weights) point.push_back(w);
      for (const auto& b : ftn.stage_biases) point.push_back(b);
      for (const auto& s : ftn.slopes) point.push_back(s);

      fold(rep, grad_check(
                    [&](Tape<D>& t, std::span<const Var> v) {
                      FtnVars vars;
                      vars.groups = groups;
                      std::size_t k = 4;
                      for (std::size_t s = 0; s < depth; ++s) vars.stage_weights.push_back(v[k++]);
                      for (std::size_t s = 0; s < depth; ++s) vars.stage_biases.push_back(v[k++]);
                      for (std::size_t s = 0; s + 1 < depth; ++s) vars.slopes.push_back(v[k++]);
                      const Var transformed = ftn_transform(t, v[1], vars);
                      const Var w = ops::blend(t, v[1], transformed, a);
                      const Var b = ops::blend(t, v[2], v[3], a);
                      return ops::weighted_sum(t, ops::conv2d(t, v[0], w, b, 1), r);
                    },
                    point, epsilon));
    }
  }
  return reports;
}

}  // namespace cll
