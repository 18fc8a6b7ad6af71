#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "cll/errors.hpp"
#include "cll/model.hpp"
#include "cll/tensor.hpp"

namespace cll {

// Checkpoint layout, all integers little-endian:
//   "CLL1"  u16 version
//   u32 channels, num_blocks, kernel_size, image_channels
//   u8 provider mode, u32 ftn groups, u32 ftn depth, u8 exclude_last
//   u32 entry count, then per entry:
//     u32 name length, UTF-8 name, u32 dims[4], f32 payload[numel]
inline constexpr char kCheckpointMagic[4] = {'C', 'L', 'L', '1'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

enum class CheckpointErrorCode { bad_magic = 1, version_mismatch, truncated, dim_mismatch, malformed, io };

const char* to_string(CheckpointErrorCode code);

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrorCode code, const std::string& what)
      : Error(std::string(to_string(code)) + ": " + what), code_(code) {}
  CheckpointErrorCode code() const noexcept { return code_; }

 private:
  CheckpointErrorCode code_;
};

void write_checkpoint(std::ostream& os, const Network& net);
// Validates every name and extent against the stored spec before returning.
Network read_checkpoint(std::istream& is);

void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);

class ImageError : public Error {
 public:
  using Error::Error;
};

// 8-bit PGM (P5) or PNG (grayscale or RGB, 8-bit), chosen by extension.
// Pixels map to [0,1] by /255; the result is (1, C, H, W).
Tensor<Real> read_image(const std::filesystem::path& path);

// Writes the first image of an (N, C, H, W) tensor with C = 1 or 3 (3 needs
// PNG). Values are clamped to [0,1] and rounded half-to-even to 8 bits.
void write_image(const Tensor<Real>& image, const std::filesystem::path& path);

// The 8-bit code a value is written as.
std::uint8_t quantize(Real v);

}  // namespace cll
