#pragma once

#include <cstddef>
#include <cstdint>

#include "cll/model.hpp"
#include "cll/tensor.hpp"

namespace cll {

// Noise standard deviation on the [0,1] intensity scale.
struct NoiseLevel {
  double sigma = 0.0;

  // sigma given on the 8-bit scale, e.g. 20 -> 20/255.
  static NoiseLevel from_8bit(double s);
  double as_8bit() const noexcept { return sigma * 255.0; }
  void validate() const;
};

// SplitMix64 finaliser; used to derive independent per-sample seeds.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

enum class Stream : std::uint64_t { train = 0, validation = 1 };

// Procedural images in [0,1]: a smooth ramp, a few overlapping rectangles and
// a band-limited sinusoid texture. Every sample is a pure function of
// (seed, stream, index), so batches can be drawn in any order.
class SyntheticDataset {
 public:
  explicit SyntheticDataset(std::uint64_t seed, std::size_t channels = 1) : seed_(seed), channels_(channels) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t channels() const noexcept { return channels_; }

  std::uint64_t sample_seed(Stream stream, std::uint64_t index) const noexcept;

  // Writes one (channels, size, size) image into dst.
  void render(Stream stream, std::uint64_t index, std::size_t size, Real* dst) const;
  Tensor<Real> clean_batch(Stream stream, std::uint64_t first, std::size_t count, std::size_t size) const;

  // Unit normal draws for each pixel of a sample, independent of its content.
  void standard_noise(Stream stream, std::uint64_t index, std::size_t numel, Real* dst) const;

 private:
  std::uint64_t seed_;
  std::size_t channels_;
};

struct Batch {
  Tensor<Real> noisy;
  Tensor<Real> clean;
};

// noisy = clean + sigma * z with z ~ N(0,1) i.i.d.; never clamped.
Batch make_noisy(const SyntheticDataset& data, Stream stream, std::uint64_t first, std::size_t count,
                 std::size_t size, double sigma);

// A fixed validation set: clean images plus one frozen noise draw per image,
// so every sigma and every evaluation sees the same realisation.
struct ValidationSet {
  Tensor<Real> clean;
  Tensor<Real> unit_noise;

  static ValidationSet make(const SyntheticDataset& data, std::size_t count, std::size_t size);
  Tensor<Real> noisy(double sigma) const;
  std::size_t size() const noexcept { return clean.shape().n; }
};

}  // namespace cll
