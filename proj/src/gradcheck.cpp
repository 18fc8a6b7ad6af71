#include "cll/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace cll {
namespace {

double evaluate(const GradCheckFn& f, const std::vector<Tensor<double>>& point) {
  Tape<double> tape;
  std::vector<Var> leaves;
  leaves.reserve(point.size());
  for (const auto& p : point) leaves.push_back(tape.leaf(p, false));
  const Var out = f(tape, leaves);
  const auto& v = tape.value(out);
  if (v.size() != 1) throw OracleError("grad_check: function must return a scalar, got " + v.shape().str());
  if (!std::isfinite(v[0])) throw OracleError("grad_check: non-finite function value during probing");
  return v[0];
}

}  // namespace

GradCheckResult grad_check(const GradCheckFn& f, const std::vector<Tensor<double>>& point, double epsilon,
                           const GradCheckExclude& exclude) {
  if (!(epsilon > 0.0)) throw OracleError("grad_check: epsilon must be positive");

  Tape<double> tape;
  std::vector<Var> leaves;
  leaves.reserve(point.size());
  for (const auto& p : point) {
    if (!p.all_finite()) throw OracleError("grad_check: probe point contains non-finite values");
    leaves.push_back(tape.leaf(p, true));
  }
  const Var out = f(tape, leaves);
  if (tape.value(out).size() != 1) {
    throw OracleError("grad_check: function must return a scalar, got " + tape.value(out).shape().str());
  }
  tape.backward(out);

  GradCheckResult result;
  std::vector<Tensor<double>> probe = point;
  for (std::size_t k = 0; k < point.size(); ++k) {
    const bool reached = tape.has_grad(leaves[k]);
    for (std::size_t i = 0; i < point[k].size(); ++i) {
      if (exclude && exclude(k, i)) {
        ++result.excluded;
        continue;
      }
      const double analytic = reached ? tape.grad(leaves[k])[i] : 0.0;
      if (!std::isfinite(analytic)) throw OracleError("grad_check: non-finite analytic gradient");
      const double x0 = point[k][i];
      probe[k][i] = x0 + epsilon;
      const double up = evaluate(f, probe);
      probe[k][i] = x0 - epsilon;
      const double down = evaluate(f, probe);
      probe[k][i] = x0;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckDenominatorFloor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++result.checked;
      if (result.checked == 1 || rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_input = k;
        result.worst_index = i;
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace cll
