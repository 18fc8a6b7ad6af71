#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cll/tape.hpp"
#include "cll/tensor.hpp"

namespace cll {

// Builds a scalar on the tape from leaves holding the probe point.
using GradCheckFn = std::function<Var(Tape<double>&, std::span<const Var>)>;

// Returns true for coordinates that must not be probed (e.g. PReLU kinks).
using GradCheckExclude = std::function<bool(std::size_t input, std::size_t index)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
};

inline constexpr double kGradCheckEpsilon = 1e-5;
inline constexpr double kGradCheckDenominatorFloor = 1e-12;
// Probe step for the randomised suite. Every probed map is piecewise linear or
// quadratic per coordinate, so central differences carry no truncation error
// and a wider step only shrinks cancellation roundoff.
inline constexpr double kSuiteEpsilon = 1e-3;

// Central differences (f(x+e) - f(x-e)) / 2e per coordinate against the tape
// gradient. Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-12);
// the worst one is reported. Always runs in double precision. Throws
// OracleError when f produces a non-finite value.
GradCheckResult grad_check(const GradCheckFn& f, const std::vector<Tensor<double>>& point,
                           double epsilon = kGradCheckEpsilon, const GradCheckExclude& exclude = {});

struct OpGradReport {
  std::string op;
  double worst_rel_error = 0.0;
  std::size_t instances = 0;
  std::size_t coordinates = 0;
  std::size_t excluded = 0;
};

// Runs grad_check on `instances` random instances of every differentiable
// operation (extents up to (2, 8, 8, 8)) and of a full FTN-wrapped convolution
// layer with 8 filters. Points closer than 10 * epsilon to a PReLU or L1 kink
// are excluded.
std::vector<OpGradReport> run_gradient_suite(std::uint64_t seed, std::size_t instances = 20,
                                             double epsilon = kSuiteEpsilon);

}  // namespace cll
