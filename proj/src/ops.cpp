#include "cll/ops.hpp"

#include <cmath>
#include <iostream>

#include "cll/kernels.hpp"

namespace cll::ops {
namespace {

template <class T>
Tensor<T> scaled(const Tensor<T>& g, T factor) {
  Tensor<T> out(g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = factor * g[i];
  return out;
}

// Neumaier-compensated running sum; fixed order, so still deterministic.
template <class T>
class CompensatedSum {
 public:
  void add(T v) {
    const T t = sum_ + v;
    comp_ += std::abs(sum_) >= std::abs(v) ? (sum_ - t) + v : (v - t) + sum_;
    sum_ = t;
  }
  T value() const { return sum_ + comp_; }

 private:
  T sum_ = 0;
  T comp_ = 0;
};

template <class T>
Tensor<T> scalar(T v) {
  return Tensor<T>(Shape{1, 1, 1, 1}, v);
}

}  // namespace

double checked_alpha(double alpha, AlphaPolicy policy) {
  if (!std::isfinite(alpha)) throw RangeError("blend coefficient is not finite");
  if (alpha >= 0.0 && alpha <= 1.0) return alpha;
  switch (policy) {
    case AlphaPolicy::strict:
      throw RangeError("blend coefficient " + std::to_string(alpha) + " outside [0, 1]");
    case AlphaPolicy::clamp: {
      const double c = alpha < 0.0 ? 0.0 : 1.0;
      std::clog << "cll: clamping blend coefficient " << alpha << " to " << c << '\n';
      return c;
    }
    case AlphaPolicy::extrapolate:
      return alpha;
  }
  return alpha;
}

template <class T>
Var conv2d(Tape<T>& tape, Var input, Var weight, Var bias, std::size_t padding) {
  Tensor<T> out =
      kernels::conv2d_forward(tape.value(input), tape.value(weight), tape.value(bias), padding);
  return tape.record(std::move(out), {input, weight, bias},
                     [input, weight, bias, padding](Tape<T>& t, const Tensor<T>& g) {
                       auto grads = kernels::conv2d_backward(g, t.value(input), t.value(weight), padding);
                       t.accumulate(input, grads.input);
                       t.accumulate(weight, grads.weight);
                       t.accumulate(bias, grads.bias);
                     });
}

template <class T>
Var grouped_pointwise_conv(Tape<T>& tape, Var input, Var weight, Var bias, std::size_t groups) {
  Tensor<T> out =
      kernels::grouped_pointwise_forward(tape.value(input), tape.value(weight), tape.value(bias), groups);
  return tape.record(std::move(out), {input, weight, bias},
                     [input, weight, bias, groups](Tape<T>& t, const Tensor<T>& g) {
                       auto grads =
                           kernels::grouped_pointwise_backward(g, t.value(input), t.value(weight), groups);
                       t.accumulate(input, grads.input);
                       t.accumulate(weight, grads.weight);
                       t.accumulate(bias, grads.bias);
                     });
}

template <class T>
Var prelu(Tape<T>& tape, Var input, Var slope) {
  if (tape.value(slope).size() != 1) {
    throw DimensionError("prelu: slope must be a single scalar, got " + tape.value(slope).shape().str());
  }
  const T a = tape.value(slope)[0];
  return tape.record(kernels::prelu_forward(tape.value(input), a), {input, slope},
                     [input, slope](Tape<T>& t, const Tensor<T>& g) {
                       auto grads = kernels::prelu_backward(g, t.value(input), t.value(slope)[0]);
                       t.accumulate(input, grads.input);
                       t.accumulate(slope, scalar(grads.slope));
                     });
}

template <class T>
Var prelu(Tape<T>& tape, Var input, T slope) {
  return tape.record(kernels::prelu_forward(tape.value(input), slope), {input},
                     [input, slope](Tape<T>& t, const Tensor<T>& g) {
                       t.accumulate(input, kernels::prelu_backward(g, t.value(input), slope).input);
                     });
}

template <class T>
Var blend(Tape<T>& tape, Var a, Var b, double alpha, AlphaPolicy policy) {
  const T w = static_cast<T>(checked_alpha(alpha, policy));
  return tape.record(kernels::blend(tape.value(a), tape.value(b), w), {a, b},
                     [a, b, w](Tape<T>& t, const Tensor<T>& g) {
                       t.accumulate(a, scaled(g, T(1) - w));
                       t.accumulate(b, scaled(g, w));
                     });
}

template <class T>
Var blend_map(Tape<T>& tape, Var a, Var b, Var map) {
  const Tensor<T>& m = tape.value(map);
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!(m[i] >= T(0) && m[i] <= T(1))) {
      throw RangeError("level map entry " + std::to_string(i) + " outside [0, 1]");
    }
  }
  return tape.record(kernels::blend_map(tape.value(a), tape.value(b), m), {a, b},
                     [a, b, map](Tape<T>& t, const Tensor<T>& g) {
                       const Tensor<T>& mv = t.value(map);
                       const std::size_t plane = mv.size();
                       Tensor<T> ga(g.shape());
                       Tensor<T> gb(g.shape());
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const T m = mv[i % plane];
                         ga[i] = (T(1) - m) * g[i];
                         gb[i] = m * g[i];
                       }
                       t.accumulate(a, ga);
                       t.accumulate(b, gb);
                     });
}

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& va = tape.value(a);
  const Tensor<T>& vb = tape.value(b);
  require_same_shape(va.shape(), vb.shape(), "add");
  Tensor<T> out(va.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <class T>
Var channel_affine(Tape<T>& tape, Var x, Var scale, Var shift) {
  Tensor<T> out = kernels::channel_affine(tape.value(x), tape.value(scale), tape.value(shift));
  return tape.record(std::move(out), {x, scale, shift}, [x, scale, shift](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    const Tensor<T>& sv = t.value(scale);
    const std::size_t rows = xv.shape().n;
    const std::size_t stride = xv.size() / (rows == 0 ? 1 : rows);
    Tensor<T> gx(xv.shape());
    Tensor<T> gs(sv.shape());
    Tensor<T> gh(sv.shape());
    for (std::size_t c = 0; c < rows; ++c) {
      T acc_s = 0;
      T acc_h = 0;
      for (std::size_t i = 0; i < stride; ++i) {
        const std::size_t k = c * stride + i;
        gx[k] = sv[c] * g[k];
        acc_s += xv[k] * g[k];
        acc_h += g[k];
      }
      gs[c] = acc_s;
      gh[c] = acc_h;
    }
    t.accumulate(x, gx);
    t.accumulate(scale, gs);
    t.accumulate(shift, gh);
  });
}

template <class T>
Var swap_nc(Tape<T>& tape, Var x) {
  return tape.record(kernels::swap_nc(tape.value(x)), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, kernels::swap_nc(g));
  });
}

template <class T>
Var loss_l2(Tape<T>& tape, Var pred, Var target) {
  const Tensor<T>& p = tape.value(pred);
  const Tensor<T>& q = tape.value(target);
  require_same_shape(p.shape(), q.shape(), "loss_l2");
  CompensatedSum<T> acc;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T d = p[i] - q[i];
    acc.add(d * d);
  }
  const T count = static_cast<T>(p.size());
  return tape.record(scalar(acc.value() / count), {pred, target}, [pred, target, count](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& pv = t.value(pred);
    const Tensor<T>& qv = t.value(target);
    const T k = T(2) * g[0] / count;
    Tensor<T> gp(pv.shape());
    for (std::size_t i = 0; i < pv.size(); ++i) gp[i] = k * (pv[i] - qv[i]);
    t.accumulate(pred, gp);
    if (t.requires_grad(target)) t.accumulate(target, scaled(gp, T(-1)));
  });
}

template <class T>
Var loss_l1(Tape<T>& tape, Var pred, Var target) {
  const Tensor<T>& p = tape.value(pred);
  const Tensor<T>& q = tape.value(target);
  require_same_shape(p.shape(), q.shape(), "loss_l1");
  CompensatedSum<T> acc;
  for (std::size_t i = 0; i < p.size(); ++i) acc.add(std::abs(p[i] - q[i]));
  const T count = static_cast<T>(p.size());
  return tape.record(scalar(acc.value() / count), {pred, target}, [pred, target, count](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& pv = t.value(pred);
    const Tensor<T>& qv = t.value(target);
    const T k = g[0] / count;
    Tensor<T> gp(pv.shape());
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const T d = pv[i] - qv[i];
      gp[i] = d > T(0) ? k : (d < T(0) ? -k : T(0));
    }
    t.accumulate(pred, gp);
    if (t.requires_grad(target)) t.accumulate(target, scaled(gp, T(-1)));
  });
}

template <class T>
Var weighted_sum(Tape<T>& tape, Var x, const Tensor<T>& weights) {
  const Tensor<T>& xv = tape.value(x);
  require_same_shape(xv.shape(), weights.shape(), "weighted_sum");
  CompensatedSum<T> acc;
  for (std::size_t i = 0; i < xv.size(); ++i) acc.add(xv[i] * weights[i]);
  return tape.record(scalar(acc.value()), {x}, [x, weights](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, scaled(weights, g[0]));
  });
}

#define CLL_INSTANTIATE_OPS(T)                                                      \
  template Var conv2d(Tape<T>&, Var, Var, Var, std::size_t);                        \
  template Var grouped_pointwise_conv(Tape<T>&, Var, Var, Var, std::size_t);        \
  template Var prelu(Tape<T>&, Var, Var);                                           \
  template Var prelu(Tape<T>&, Var, T);                                             \
  template Var blend(Tape<T>&, Var, Var, double, AlphaPolicy);                      \
  template Var blend_map(Tape<T>&, Var, Var, Var);                                  \
  template Var add(Tape<T>&, Var, Var);                                             \
  template Var channel_affine(Tape<T>&, Var, Var, Var);                             \
  template Var swap_nc(Tape<T>&, Var);                                              \
  template Var loss_l2(Tape<T>&, Var, Var);                                         \
  template Var loss_l1(Tape<T>&, Var, Var);                                         \
  template Var weighted_sum(Tape<T>&, Var, const Tensor<T>&);

CLL_INSTANTIATE_OPS(float)
CLL_INSTANTIATE_OPS(double)

#undef CLL_INSTANTIATE_OPS

}  // namespace cll::ops
