#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dpsr/tensor.hpp"

namespace dpsr {

// Hyperspectral cube stored band-interleaved-by-line: for each line y, for
// each band c, the W samples of that line. One acquisition line is one
// contiguous record of W*C floats.
struct HsiCube {
  std::uint32_t height = 0, width = 0, bands = 0;
  std::vector<float> data;
  std::vector<std::uint8_t> band_valid;  // 1 = valid, 0 = zeroed-out band

  HsiCube() = default;
  HsiCube(std::uint32_t h, std::uint32_t w, std::uint32_t c);

  float& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * bands + c) * width + x]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * bands + c) * width + x]; }

  std::size_t valid_band_count() const;

  // Line y as a [W, C] tensor.
  TensorF line(std::size_t y) const;
  // Whole cube as [H, W, C].
  TensorF to_tensor() const;
  // Inverse of to_tensor; all bands valid.
  static HsiCube from_tensor(const TensorF& t);
  // Rows [begin, end), same width and band mask.
  HsiCube lines(std::size_t begin, std::size_t end) const;

  friend bool operator==(const HsiCube&, const HsiCube&) = default;
};

// Cube container: "HSC1", u16 version (1), u32 H, W, C, u16 flags
// (bit 0: band mask present), optional C mask bytes, then 4*H*W*C bytes of
// little-endian f32 in BIL order. All integers little-endian.
void write_cube(const std::filesystem::path& path, const HsiCube& cube);
HsiCube read_cube(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_cube(const HsiCube& cube);
HsiCube decode_cube(const std::vector<std::uint8_t>& bytes);

// Catmull-Rom cubic kernel (a = -0.5).
double cubic_kernel(double t);

// Separable bicubic decimation by r with half-pixel phase, kernel stretched
// by r for antialiasing, and mirrored boundaries. Requires H, W divisible by r.
HsiCube bicubic_downsample(const HsiCube& cube, std::uint32_t r);
// Separable bicubic interpolation by r with the same phase and boundary rules.
HsiCube bicubic_upsample(const HsiCube& cube, std::uint32_t r);

struct SynthOptions {
  std::uint64_t seed = 0;
  std::uint32_t height = 64, width = 64, bands = 8;
  // Correlation length in pixels: spatial frequencies are capped at
  // 0.5 / smoothness cycles per pixel.
  double smoothness = 4.0;
  std::uint32_t endmembers = 4;
};

// Deterministic synthetic scene: band-limited random abundance fields mixed
// with smooth random endmember spectra, modulated by a shading field and
// clipped to [0, 1].
HsiCube make_synthetic(const SynthOptions& opt);

// Dihedral augmentations of a square patch: rotations by 0, 90, 180, 270
// degrees, each followed by its horizontal flip. Element 0 is the identity.
std::vector<HsiCube> augment8(const HsiCube& patch);
// One member of the augment8 group by index 0..7.
HsiCube augment(const HsiCube& patch, unsigned index);

// Spatial crop of [y0, y0+h) x [x0, x0+w).
HsiCube crop(const HsiCube& cube, std::uint32_t y0, std::uint32_t x0, std::uint32_t h, std::uint32_t w);

enum class Interleave { bil, bsq, bip };

struct RawHeader {
  std::uint32_t height = 0, width = 0, bands = 0;
  Interleave interleave = Interleave::bil;
};

// Plain-text sidecar with lines "key = value" for height, width, bands,
// interleave (bil | bsq | bip). '#' starts a comment.
RawHeader parse_raw_header(const std::filesystem::path& path);
// Flat little-endian float32 raster in the declared interleave.
HsiCube import_raw(const std::filesystem::path& raw, const RawHeader& header);

}  // namespace dpsr
