#include "cll/kernels.hpp"

#include <algorithm>
#include <vector>

#include <Eigen/Core>

#include "cll/mac_counter.hpp"

namespace cll::kernels {
namespace {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// Per-thread scratch for the unfolded columns, reused across calls.
template <class T>
T* scratch(std::size_t slot, std::size_t count) {
  thread_local std::vector<T> buffers[2];
  std::vector<T>& b = buffers[slot];
  if (b.size() < count) b.resize(count);
  return b.data();
}

struct ConvGeometry {
  std::size_t n, c_in, h, w;
  std::size_t c_out, kh, kw;
  std::size_t pad;
  std::size_t out_h, out_w;

  std::size_t rows() const { return c_in * kh * kw; }
  std::size_t plane() const { return out_h * out_w; }
};

template <class T>
ConvGeometry conv_geometry(const Shape& in, const Shape& wt, const Shape& bias, std::size_t pad) {
  if (wt.c != in.c) {
    throw DimensionError("conv2d: filter C_in " + std::to_string(wt.c) + " does not match input C " +
                         std::to_string(in.c));
  }
  if (wt.h % 2 == 0 || wt.w % 2 == 0) {
    throw DimensionError("conv2d: kernel extents must be odd, got K_H " + std::to_string(wt.h) +
                         ", K_W " + std::to_string(wt.w));
  }
  if (bias != Shape{wt.n, 1, 1, 1}) {
    throw DimensionError("conv2d: bias shape " + bias.str() + " does not match C_out " +
                         std::to_string(wt.n));
  }
  if (in.h + 2 * pad < wt.h || in.w + 2 * pad < wt.w) {
    throw DimensionError("conv2d: padded input " + in.str() + " smaller than kernel on H/W");
  }
  return ConvGeometry{in.n, in.c, in.h, in.w, wt.n, wt.h, wt.w, pad,
                      in.h + 2 * pad - wt.h + 1, in.w + 2 * pad - wt.w + 1};
}

// Output columns [lo, hi) whose input column ox + k - pad lies inside [0, w).
struct ValidSpan {
  std::size_t lo, hi;
};

inline ValidSpan valid_span(std::size_t k, std::size_t pad, std::size_t in, std::size_t out) {
  const std::size_t lo = pad > k ? std::min(pad - k, out) : 0;
  const std::size_t hi = std::min(out, in + pad > k ? in + pad - k : 0);
  return ValidSpan{lo, std::max(lo, hi)};
}

// Unfolds image `n`: col[(ci*KH + ky)*KW + kx][oy*OW + ox] = x[n, ci, oy+ky-p, ox+kx-p].
template <class T>
MatrixMap<T> im2col(const Tensor<T>& x, std::size_t n, const ConvGeometry& g) {
  MatrixMap<T> col(scratch<T>(0, g.rows() * g.plane()), g.rows(), g.plane());
  const T* src = x.raw() + n * g.c_in * g.h * g.w;
  for (std::size_t ci = 0; ci < g.c_in; ++ci, src += g.h * g.w) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      const ValidSpan ys = valid_span(ky, g.pad, g.h, g.out_h);
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const ValidSpan xs = valid_span(kx, g.pad, g.w, g.out_w);
        T* dst = col.data() + ((ci * g.kh + ky) * g.kw + kx) * g.plane();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          T* drow = dst + oy * g.out_w;
          if (oy < ys.lo || oy >= ys.hi) {
            std::fill(drow, drow + g.out_w, T(0));
            continue;
          }
          const T* srow = src + (oy + ky - g.pad) * g.w;
          std::fill(drow, drow + xs.lo, T(0));
          std::copy(srow + (xs.lo + kx - g.pad), srow + (xs.hi + kx - g.pad), drow + xs.lo);
          std::fill(drow + xs.hi, drow + g.out_w, T(0));
        }
      }
    }
  }
  return col;
}

// Folds a (rows x plane) column matrix back onto image `n` of x, accumulating.
template <class T>
void col2im_accumulate(const T* col, std::size_t n, const ConvGeometry& g, Tensor<T>& x) {
  T* img = x.raw() + n * g.c_in * g.h * g.w;
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    T* dst = img + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      const ValidSpan ys = valid_span(ky, g.pad, g.h, g.out_h);
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const ValidSpan xs = valid_span(kx, g.pad, g.w, g.out_w);
        const T* src = col + ((ci * g.kh + ky) * g.kw + kx) * g.plane();
        for (std::size_t oy = ys.lo; oy < ys.hi; ++oy) {
          T* __restrict drow = dst + (oy + ky - g.pad) * g.w + (xs.lo + kx - g.pad);
          const T* __restrict srow = src + oy * g.out_w + xs.lo;
          for (std::size_t i = 0; i < xs.hi - xs.lo; ++i) drow[i] += srow[i];
        }
      }
    }
  }
}

}  // namespace

void require_groups(std::size_t channels, std::size_t groups) {
  if (groups == 0 || channels % groups != 0) {
    throw ConfigError("group count " + std::to_string(groups) + " does not divide " +
                      std::to_string(channels) + " channels");
  }
}

// Both directions run one image at a time so the unfolded columns stay in
// cache and the NCHW image blocks serve directly as (C x H*W) matrices.
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                         std::size_t padding) {
  const ConvGeometry g = conv_geometry<T>(input.shape(), weight.shape(), bias.shape(), padding);
  Tensor<T> out(Shape{g.n, g.c_out, g.out_h, g.out_w});
  ConstMatrixMap<T> wmat(weight.raw(), g.c_out, g.rows());
  for (std::size_t n = 0; n < g.n; ++n) {
    const MatrixMap<T> col = im2col(input, n, g);
    MatrixMap<T> y(out.raw() + n * g.c_out * g.plane(), g.c_out, g.plane());
    y.noalias() = wmat * col;
    for (std::size_t co = 0; co < g.c_out; ++co) y.row(co).array() += bias[co];
  }
  count_macs("conv2d", static_cast<std::uint64_t>(g.n) * g.plane() * g.c_out * g.rows());
  return out;
}

template <class T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                               const Tensor<T>& weight, std::size_t padding) {
  if (input.empty() || weight.empty()) {
    throw TapeError("conv2d backward: saved activations missing");
  }
  const ConvGeometry g =
      conv_geometry<T>(input.shape(), weight.shape(), Shape{weight.shape().n, 1, 1, 1}, padding);
  if (grad_out.shape() != Shape{g.n, g.c_out, g.out_h, g.out_w}) {
    throw TapeError("conv2d backward: grad_out " + grad_out.shape().str() +
                    " inconsistent with recorded forward");
  }
  Conv2dGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(weight.shape()), Tensor<T>(Shape{g.c_out, 1, 1, 1})};
  ConstMatrixMap<T> wmat(weight.raw(), g.c_out, g.rows());
  MatrixMap<T> gw(grads.weight.raw(), g.c_out, g.rows());
  MatrixMap<T> gcol(scratch<T>(1, g.rows() * g.plane()), g.rows(), g.plane());
  // Images are accumulated in index order, which fixes the reduction order.
  for (std::size_t n = 0; n < g.n; ++n) {
    ConstMatrixMap<T> gy(grad_out.raw() + n * g.c_out * g.plane(), g.c_out, g.plane());
    const MatrixMap<T> col = im2col(input, n, g);
    gw.noalias() += gy * col.transpose();
    for (std::size_t co = 0; co < g.c_out; ++co) {
      const T* row = gy.data() + co * g.plane();
      T acc = 0;
      for (std::size_t p = 0; p < g.plane(); ++p) acc += row[p];
      grads.bias[co] += acc;
    }
    gcol.noalias() = wmat.transpose() * gy;
    col2im_accumulate(gcol.data(), n, g, grads.input);
  }
  return grads;
}

template <class T>
Tensor<T> grouped_pointwise_forward(const Tensor<T>& input, const Tensor<T>& weight,
                                    const Tensor<T>& bias, std::size_t groups) {
  const Shape& s = input.shape();
  require_groups(s.c, groups);
  const std::size_t per_group = s.c / groups;
  if (weight.shape() != Shape{s.c, per_group, 1, 1}) {
    throw DimensionError("grouped_pointwise_conv: weight " + weight.shape().str() + " expected " +
                         Shape{s.c, per_group, 1, 1}.str());
  }
  if (bias.shape() != Shape{s.c, 1, 1, 1}) {
    throw DimensionError("grouped_pointwise_conv: bias " + bias.shape().str() + " expected " +
                         Shape{s.c, 1, 1, 1}.str());
  }
  Tensor<T> out(s);
  const std::size_t plane = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t first = (c / per_group) * per_group;
      T* dst = out.raw() + (n * s.c + c) * plane;
      std::fill(dst, dst + plane, bias[c]);
      for (std::size_t j = 0; j < per_group; ++j) {
        const T wv = weight[c * per_group + j];
        const T* src = input.raw() + (n * s.c + first + j) * plane;
        for (std::size_t q = 0; q < plane; ++q) dst[q] += wv * src[q];
      }
    }
  }
  count_macs("grouped_pointwise", static_cast<std::uint64_t>(s.n) * plane * s.c * per_group);
  return out;
}

template <class T>
Conv2dGrads<T> grouped_pointwise_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                                          const Tensor<T>& weight, std::size_t groups) {
  if (input.empty() || weight.empty()) {
    throw TapeError("grouped_pointwise_conv backward: saved activations missing");
  }
  const Shape& s = input.shape();
  require_groups(s.c, groups);
  if (grad_out.shape() != s) {
    throw TapeError("grouped_pointwise_conv backward: grad_out " + grad_out.shape().str() +
                    " inconsistent with recorded forward");
  }
  const std::size_t per_group = s.c / groups;
  const std::size_t plane = s.plane();
  Conv2dGrads<T> grads{Tensor<T>(s), Tensor<T>(weight.shape()), Tensor<T>(Shape{s.c, 1, 1, 1})};
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t first = (c / per_group) * per_group;
      const T* g = grad_out.raw() + (n * s.c + c) * plane;
      T bacc = 0;
      for (std::size_t q = 0; q < plane; ++q) bacc += g[q];
      grads.bias[c] += bacc;
      for (std::size_t j = 0; j < per_group; ++j) {
        const T wv = weight[c * per_group + j];
        const T* src = input.raw() + (n * s.c + first + j) * plane;
        T* gin = grads.input.raw() + (n * s.c + first + j) * plane;
        T wacc = 0;
        for (std::size_t q = 0; q < plane; ++q) {
          wacc += g[q] * src[q];
          gin[q] += wv * g[q];
        }
        grads.weight[c * per_group + j] += wacc;
      }
    }
  }
  return grads;
}

template <class T>
Tensor<T> prelu_forward(const Tensor<T>& input, T slope) {
  Tensor<T> out(input.shape());
  const T* __restrict x = input.raw();
  T* __restrict y = out.raw();
  // Branchless so the loop vectorises; sign patterns of activations are noisy.
  for (std::size_t i = 0; i < input.size(); ++i) y[i] = std::max(x[i], T(0)) + slope * std::min(x[i], T(0));
  return out;
}

template <class T>
PreluGrads<T> prelu_backward(const Tensor<T>& grad_out, const Tensor<T>& input, T slope) {
  if (input.empty() && !grad_out.empty()) {
    throw TapeError("prelu backward: saved activations missing");
  }
  require_same_shape(grad_out.shape(), input.shape(), "prelu backward");
  PreluGrads<T> grads{Tensor<T>(input.shape()), T(0)};
  const T* __restrict x = input.raw();
  const T* __restrict g = grad_out.raw();
  T* __restrict gi = grads.input.raw();
  T acc = 0;
  for (std::size_t i = 0; i < input.size(); ++i) {
    const bool pos = x[i] >= T(0);
    gi[i] = pos ? g[i] : slope * g[i];
    acc += pos ? T(0) : x[i] * g[i];
  }
  grads.slope = acc;
  return grads;
}

template <class T>
Tensor<T> blend(const Tensor<T>& a, const Tensor<T>& b, T alpha) {
  require_same_shape(a.shape(), b.shape(), "blend");
  if (alpha == T(0)) return a;
  if (alpha == T(1)) return b;
  Tensor<T> out(a.shape());
  const T keep = T(1) - alpha;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = keep * a[i] + alpha * b[i];
  count_macs("blend", 2 * static_cast<std::uint64_t>(a.size()));
  return out;
}

template <class T>
Tensor<T> blend_map(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& map) {
  require_same_shape(a.shape(), b.shape(), "blend_map");
  const Shape& s = a.shape();
  if (map.shape() != Shape{1, 1, s.h, s.w}) {
    throw DimensionError("blend_map: level map " + map.shape().str() + " does not match spatial extent " +
                         std::to_string(s.h) + "x" + std::to_string(s.w));
  }
  Tensor<T> out(s);
  const std::size_t plane = s.plane();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* pa = a.raw() + nc * plane;
    const T* pb = b.raw() + nc * plane;
    T* po = out.raw() + nc * plane;
    for (std::size_t q = 0; q < plane; ++q) {
      const T m = map[q];
      po[q] = m == T(0) ? pa[q] : (m == T(1) ? pb[q] : (T(1) - m) * pa[q] + m * pb[q]);
    }
  }
  count_macs("blend", 2 * static_cast<std::uint64_t>(a.size()));
  return out;
}

template <class T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift) {
  const Shape& s = x.shape();
  if (scale.shape() != Shape{s.n, 1, 1, 1} || shift.shape() != Shape{s.n, 1, 1, 1}) {
    throw DimensionError("channel_affine: scale " + scale.shape().str() + " / shift " +
                         shift.shape().str() + " do not match leading extent " + std::to_string(s.n));
  }
  Tensor<T> out(s);
  const std::size_t stride = s.c * s.h * s.w;
  for (std::size_t c = 0; c < s.n; ++c) {
    for (std::size_t i = 0; i < stride; ++i) {
      out[c * stride + i] = scale[c] * x[c * stride + i] + shift[c];
    }
  }
  count_macs("channel_affine", static_cast<std::uint64_t>(x.size()));
  return out;
}

template <class T>
Tensor<T> swap_nc(const Tensor<T>& x) {
  const Shape& s = x.shape();
  Tensor<T> out(Shape{s.c, s.n, s.h, s.w});
  const std::size_t plane = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = x.raw() + (n * s.c + c) * plane;
      std::copy(src, src + plane, out.raw() + (c * s.n + n) * plane);
    }
  }
  return out;
}

#define CLL_INSTANTIATE_KERNELS(T)                                                                \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                    std::size_t);                                                 \
  template Conv2dGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                          std::size_t);                                           \
  template Tensor<T> grouped_pointwise_forward(const Tensor<T>&, const Tensor<T>&,                \
                                               const Tensor<T>&, std::size_t);                    \
  template Conv2dGrads<T> grouped_pointwise_backward(const Tensor<T>&, const Tensor<T>&,          \
                                                     const Tensor<T>&, std::size_t);              \
  template Tensor<T> prelu_forward(const Tensor<T>&, T);                                          \
  template PreluGrads<T> prelu_backward(const Tensor<T>&, const Tensor<T>&, T);                   \
  template Tensor<T> blend(const Tensor<T>&, const Tensor<T>&, T);                                \
  template Tensor<T> blend_map(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> channel_affine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> swap_nc(const Tensor<T>&);

CLL_INSTANTIATE_KERNELS(float)
CLL_INSTANTIATE_KERNELS(double)

#undef CLL_INSTANTIATE_KERNELS

}  // namespace cll::kernels
