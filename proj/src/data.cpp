#include "cll/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace cll {

NoiseLevel NoiseLevel::from_8bit(double s) {
  NoiseLevel n{s / 255.0};
  n.validate();
  return n;
}

void NoiseLevel::validate() const {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw RangeError("noise level must be finite and non-negative, got " + std::to_string(sigma));
  }
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t SyntheticDataset::sample_seed(Stream stream, std::uint64_t index) const noexcept {
  return splitmix64(splitmix64(seed_ ^ splitmix64(static_cast<std::uint64_t>(stream))) + index);
}

void SyntheticDataset::render(Stream stream, std::uint64_t index, std::size_t size, Real* dst) const {
  std::mt19937_64 rng(sample_seed(stream, index));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const double n = static_cast<double>(size);
  const std::size_t plane = size * size;

  // Shared geometry so colour channels stay correlated like natural images.
  const double base = uni(0.2, 0.8);
  const double gx = uni(-0.4, 0.4);
  const double gy = uni(-0.4, 0.4);

  struct Rect {
    double x0, x1, y0, y1, value, opacity;
  };
  std::vector<Rect> rects(1 + static_cast<std::size_t>(u(rng) * 4.0));
  for (auto& r : rects) {
    const double ax = uni(0, n), bx = uni(0, n), ay = uni(0, n), by = uni(0, n);
    r = Rect{std::min(ax, bx), std::max(ax, bx) + 2.0, std::min(ay, by), std::max(ay, by) + 2.0, uni(0, 1),
             uni(0.5, 1.0)};
  }

  struct Wave {
    double amp, kx, ky, phase;
  };
  std::vector<Wave> waves(2);
  for (auto& w : waves) {
    const double freq = uni(0.05, 0.35) * 2.0 * std::numbers::pi;
    const double theta = uni(0, std::numbers::pi);
    w = Wave{uni(0.0, 0.15), freq * std::cos(theta), freq * std::sin(theta), uni(0, 2.0 * std::numbers::pi)};
  }

  for (std::size_t c = 0; c < channels_; ++c) {
    const double tint = channels_ == 1 ? 0.0 : uni(-0.1, 0.1);
    Real* out = dst + c * plane;
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double fx = static_cast<double>(x), fy = static_cast<double>(y);
        double v = base + tint + gx * (fx / n - 0.5) + gy * (fy / n - 0.5);
        for (const auto& r : rects) {
          if (fx >= r.x0 && fx < r.x1 && fy >= r.y0 && fy < r.y1) v = (1.0 - r.opacity) * v + r.opacity * r.value;
        }
        for (const auto& w : waves) v += w.amp * std::sin(w.kx * fx + w.ky * fy + w.phase);
        out[y * size + x] = static_cast<Real>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
}

Tensor<Real> SyntheticDataset::clean_batch(Stream stream, std::uint64_t first, std::size_t count,
                                           std::size_t size) const {
  if (size == 0) throw ConfigError("patch size must be positive");
  Tensor<Real> out(Shape{count, channels_, size, size});
  const std::size_t per = channels_ * size * size;
  for (std::size_t i = 0; i < count; ++i) render(stream, first + i, size, out.raw() + i * per);
  return out;
}

void SyntheticDataset::standard_noise(Stream stream, std::uint64_t index, std::size_t numel, Real* dst) const {
  // Distinct from the content generator of the same sample.
  std::mt19937_64 rng(splitmix64(sample_seed(stream, index) ^ 0x6E6F697365ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < numel; ++i) dst[i] = static_cast<Real>(normal(rng));
}

Batch make_noisy(const SyntheticDataset& data, Stream stream, std::uint64_t first, std::size_t count,
                 std::size_t size, double sigma) {
  NoiseLevel{sigma}.validate();
  Batch b{Tensor<Real>(), data.clean_batch(stream, first, count, size)};
  b.noisy = b.clean;
  if (sigma == 0.0) return b;
  const std::size_t per = data.channels() * size * size;
  std::vector<Real> z(per);
  const Real s = static_cast<Real>(sigma);
  for (std::size_t i = 0; i < count; ++i) {
    data.standard_noise(stream, first + i, per, z.data());
    Real* dst = b.noisy.raw() + i * per;
    for (std::size_t k = 0; k < per; ++k) dst[k] += s * z[k];
  }
  return b;
}

ValidationSet ValidationSet::make(const SyntheticDataset& data, std::size_t count, std::size_t size) {
  ValidationSet v{data.clean_batch(Stream::validation, 0, count, size), Tensor<Real>()};
  v.unit_noise = Tensor<Real>(v.clean.shape());
  const std::size_t per = data.channels() * size * size;
  for (std::size_t i = 0; i < count; ++i) data.standard_noise(Stream::validation, i, per, v.unit_noise.raw() + i * per);
  return v;
}

Tensor<Real> ValidationSet::noisy(double sigma) const {
  NoiseLevel{sigma}.validate();
  Tensor<Real> out(clean.shape());
  const Real s = static_cast<Real>(sigma);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = clean[i] + s * unit_noise[i];
  return out;
}

}  // namespace cll
