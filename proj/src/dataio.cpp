#include "dpsr/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "binio.hpp"

namespace dpsr {

namespace {

constexpr char kCubeMagic[4] = {'H', 'S', 'C', '1'};
constexpr std::uint16_t kCubeVersion = 1;
constexpr std::uint16_t kFlagMask = 1;

std::size_t mirror(std::ptrdiff_t i, std::size_t n) {
  const auto m = static_cast<std::ptrdiff_t>(n);
  while (i < 0 || i >= m) {
    if (i < 0) i = -i - 1;
    if (i >= m) i = 2 * m - i - 1;
  }
  return static_cast<std::size_t>(i);
}

struct Tap {
  std::size_t index;
  double weight;
};

// One tap list per output sample.
using Taps = std::vector<std::vector<Tap>>;

Taps downsample_taps(std::size_t n, std::size_t r) {
  const std::size_t m = n / r;
  const double scale = static_cast<double>(r);
  Taps taps(m);
  for (std::size_t o = 0; o < m; ++o) {
    const double u = (static_cast<double>(o) + 0.5) * scale - 0.5;
    const auto lo = static_cast<std::ptrdiff_t>(std::ceil(u - 2.0 * scale));
    const auto hi = static_cast<std::ptrdiff_t>(std::floor(u + 2.0 * scale));
    double total = 0.0;
    for (std::ptrdiff_t i = lo; i <= hi; ++i) {
      const double w = cubic_kernel((u - static_cast<double>(i)) / scale);
      if (w == 0.0) continue;
      taps[o].push_back({mirror(i, n), w});
      total += w;
    }
    for (auto& t : taps[o]) t.weight /= total;
  }
  return taps;
}

Taps upsample_taps(std::size_t n, std::size_t r) {
  const std::size_t m = n * r;
  Taps taps(m);
  for (std::size_t o = 0; o < m; ++o) {
    const double u = (static_cast<double>(o) + 0.5) / static_cast<double>(r) - 0.5;
    const auto base = static_cast<std::ptrdiff_t>(std::floor(u));
    for (std::ptrdiff_t j = base - 1; j <= base + 2; ++j) {
      const double w = cubic_kernel(u - static_cast<double>(j));
      if (w == 0.0) continue;
      taps[o].push_back({mirror(j, n), w});
    }
  }
  return taps;
}

// Applies separable tap lists along columns then lines.
HsiCube resample(const HsiCube& in, const Taps& row_taps, const Taps& col_taps) {
  const std::size_t h = in.height, c = in.bands, w = in.width;
  const std::size_t oh = row_taps.size(), ow = col_taps.size();
  std::vector<double> across(h * c * ow);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t b = 0; b < c; ++b) {
      const float* src = &in.data[(y * c + b) * w];
      double* dst = &across[(y * c + b) * ow];
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (const Tap& t : col_taps[x]) acc += t.weight * src[t.index];
        dst[x] = acc;
      }
    }
  HsiCube out(static_cast<std::uint32_t>(oh), static_cast<std::uint32_t>(ow), static_cast<std::uint32_t>(c));
  out.band_valid = in.band_valid;
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t b = 0; b < c; ++b)
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (const Tap& t : row_taps[y]) acc += t.weight * across[(t.index * c + b) * ow + x];
        out.data[(y * c + b) * ow + x] = static_cast<float>(acc);
      }
  return out;
}

// Band-limited random field on the pixel grid, normalized so |value| <= 1.
class WaveField {
 public:
  WaveField(std::mt19937_64& rng, double kmax, std::size_t waves = 12) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    double total = 0.0;
    for (std::size_t q = 0; q < waves; ++q) {
      const double radius = kmax * std::sqrt(u01(rng));
      const double theta = 2.0 * std::numbers::pi * u01(rng);
      const double amp = 0.5 + u01(rng);
      waves_.push_back({radius * std::cos(theta), radius * std::sin(theta), 2.0 * std::numbers::pi * u01(rng), amp});
      total += amp;
    }
    for (auto& wv : waves_) wv.amp /= total;
  }

  double operator()(double x, double y) const {
    double v = 0.0;
    for (const auto& wv : waves_) v += wv.amp * std::cos(2.0 * std::numbers::pi * (wv.kx * x + wv.ky * y) + wv.phase);
    return v;
  }

 private:
  struct Wave {
    double kx, ky, phase, amp;
  };
  std::vector<Wave> waves_;
};

HsiCube transform(const HsiCube& p, unsigned rotations, bool flip) {
  const std::size_t n = p.height;
  HsiCube out = p;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      // Source coordinate of output (y, x): undo the flip, then the rotation.
      std::size_t sy = y, sx = flip ? n - 1 - x : x;
      for (unsigned k = 0; k < rotations; ++k) {
        const std::size_t ty = sx, tx = n - 1 - sy;
        sy = ty;
        sx = tx;
      }
      for (std::size_t c = 0; c < p.bands; ++c) out.at(y, x, c) = p.at(sy, sx, c);
    }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

HsiCube::HsiCube(std::uint32_t h, std::uint32_t w, std::uint32_t c)
    : height(h), width(w), bands(c), data(std::size_t{h} * w * c, 0.0f), band_valid(c, 1) {}

std::size_t HsiCube::valid_band_count() const {
  return static_cast<std::size_t>(std::count_if(band_valid.begin(), band_valid.end(), [](auto v) { return v != 0; }));
}

TensorF HsiCube::line(std::size_t y) const {
  if (y >= height) throw ContractError("HsiCube::line: index " + std::to_string(y) + " out of range");
  TensorF t({width, bands});
  for (std::size_t c = 0; c < bands; ++c)
    for (std::size_t x = 0; x < width; ++x) t[x * bands + c] = at(y, x, c);
  return t;
}

TensorF HsiCube::to_tensor() const {
  TensorF t({height, width, bands});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t c = 0; c < bands; ++c)
      for (std::size_t x = 0; x < width; ++x) t[(y * width + x) * bands + c] = at(y, x, c);
  return t;
}

HsiCube HsiCube::from_tensor(const TensorF& t) {
  if (t.rank() != 3) throw ShapeError("HsiCube::from_tensor: expected [H, W, C], got " + shape_str(t.shape()));
  HsiCube cube(static_cast<std::uint32_t>(t.dim(0)), static_cast<std::uint32_t>(t.dim(1)),
               static_cast<std::uint32_t>(t.dim(2)));
  for (std::size_t y = 0; y < cube.height; ++y)
    for (std::size_t x = 0; x < cube.width; ++x)
      for (std::size_t c = 0; c < cube.bands; ++c) cube.at(y, x, c) = t[(y * cube.width + x) * cube.bands + c];
  return cube;
}

HsiCube HsiCube::lines(std::size_t begin, std::size_t end) const {
  if (begin > end || end > height) throw ContractError("HsiCube::lines: bad range");
  HsiCube out(static_cast<std::uint32_t>(end - begin), width, bands);
  out.band_valid = band_valid;
  const std::size_t rec = std::size_t{width} * bands;
  std::copy(data.begin() + static_cast<std::ptrdiff_t>(begin * rec), data.begin() + static_cast<std::ptrdiff_t>(end * rec),
            out.data.begin());
  return out;
}

std::vector<std::uint8_t> encode_cube(const HsiCube& cube) {
  if (cube.data.size() != std::size_t{cube.height} * cube.width * cube.bands || cube.band_valid.size() != cube.bands) {
    throw ContractError("encode_cube: inconsistent cube extents");
  }
  const bool has_mask = cube.valid_band_count() != cube.bands;
  std::vector<std::uint8_t> out;
  out.reserve(20 + cube.bands + 4 * cube.data.size());
  binio::put_bytes(out, kCubeMagic, 4);
  binio::put_u16(out, kCubeVersion);
  binio::put_u32(out, cube.height);
  binio::put_u32(out, cube.width);
  binio::put_u32(out, cube.bands);
  binio::put_u16(out, has_mask ? kFlagMask : 0);
  if (has_mask) {
    for (auto v : cube.band_valid) out.push_back(v ? 1 : 0);
  }
  for (float v : cube.data) binio::put_f32(out, v);
  return out;
}

HsiCube decode_cube(const std::vector<std::uint8_t>& bytes) {
  binio::Reader in(bytes, "cube");
  char magic[4];
  in.bytes(magic, 4);
  if (std::string(magic, 4) != std::string(kCubeMagic, 4)) throw FormatError("cube: bad magic (expected HSC1)");
  const std::uint16_t version = in.u16();
  if (version != kCubeVersion) throw FormatError("cube: unsupported version " + std::to_string(version));
  const std::uint32_t h = in.u32(), w = in.u32(), c = in.u32();
  const std::uint16_t flags = in.u16();
  if (flags & ~kFlagMask) throw FormatError("cube: unknown flags " + std::to_string(flags));
  std::vector<std::uint8_t> mask(c, 1);
  if (flags & kFlagMask) {
    in.need(c);
    in.bytes(mask.data(), c);
    for (auto& m : mask) m = m ? 1 : 0;
  }
  const std::uint64_t count = std::uint64_t{h} * w * c;
  if (in.remaining() != 4 * count) {
    throw FormatError("cube: payload is " + std::to_string(in.remaining()) + " bytes, header implies " +
                      std::to_string(4 * count));
  }
  HsiCube cube(h, w, c);
  cube.band_valid = std::move(mask);
  for (auto& v : cube.data) v = in.f32();
  return cube;
}

void write_cube(const std::filesystem::path& path, const HsiCube& cube) { binio::write_file(path, encode_cube(cube)); }

HsiCube read_cube(const std::filesystem::path& path) { return decode_cube(binio::read_file(path)); }

double cubic_kernel(double t) {
  constexpr double a = -0.5;
  const double x = std::abs(t);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

HsiCube bicubic_downsample(const HsiCube& cube, std::uint32_t r) {
  if (r == 0) throw ContractError("bicubic_downsample: factor must be positive");
  if (cube.height % r != 0 || cube.width % r != 0) {
    throw ContractError("bicubic_downsample: extents " + std::to_string(cube.height) + "x" +
                        std::to_string(cube.width) + " not divisible by factor " + std::to_string(r));
  }
  return resample(cube, downsample_taps(cube.height, r), downsample_taps(cube.width, r));
}

HsiCube bicubic_upsample(const HsiCube& cube, std::uint32_t r) {
  if (r == 0) throw ContractError("bicubic_upsample: factor must be positive");
  return resample(cube, upsample_taps(cube.height, r), upsample_taps(cube.width, r));
}

HsiCube make_synthetic(const SynthOptions& opt) {
  if (opt.endmembers == 0) throw ContractError("make_synthetic: need at least one endmember");
  if (!(opt.smoothness > 0.0)) throw ContractError("make_synthetic: smoothness must be positive");
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double kmax = 0.5 / opt.smoothness;

  // Smooth spectra: a base level plus a few Gaussian bumps over the band axis.
  std::vector<std::vector<double>> spectra(opt.endmembers, std::vector<double>(opt.bands));
  for (auto& s : spectra) {
    const double base = 0.2 + 0.4 * u01(rng);
    double mu[3], sigma[3], amp[3];
    for (int g = 0; g < 3; ++g) {
      mu[g] = u01(rng);
      sigma[g] = 0.1 + 0.3 * u01(rng);
      amp[g] = 0.6 * (u01(rng) - 0.5);
    }
    for (std::uint32_t c = 0; c < opt.bands; ++c) {
      const double pos = opt.bands > 1 ? static_cast<double>(c) / (opt.bands - 1) : 0.5;
      double v = base;
      for (int g = 0; g < 3; ++g) v += amp[g] * std::exp(-(pos - mu[g]) * (pos - mu[g]) / (2 * sigma[g] * sigma[g]));
      s[c] = std::clamp(v, 0.05, 0.95);
    }
  }

  std::vector<WaveField> abundance;
  for (std::uint32_t m = 0; m < opt.endmembers; ++m) abundance.emplace_back(rng, kmax);
  const WaveField shading(rng, kmax);
  constexpr double kSharpness = 4.0;

  HsiCube cube(opt.height, opt.width, opt.bands);
  std::vector<double> weights(opt.endmembers);
  for (std::uint32_t y = 0; y < opt.height; ++y) {
    for (std::uint32_t x = 0; x < opt.width; ++x) {
      double top = -1e300;
      for (std::uint32_t m = 0; m < opt.endmembers; ++m) {
        weights[m] = kSharpness * abundance[m](x, y);
        top = std::max(top, weights[m]);
      }
      double total = 0.0;
      for (auto& wm : weights) {
        wm = std::exp(wm - top);
        total += wm;
      }
      const double shade = 0.75 + 0.25 * shading(x, y);
      for (std::uint32_t c = 0; c < opt.bands; ++c) {
        double v = 0.0;
        for (std::uint32_t m = 0; m < opt.endmembers; ++m) v += weights[m] / total * spectra[m][c];
        cube.at(y, x, c) = static_cast<float>(std::clamp(shade * v, 0.0, 1.0));
      }
    }
  }
  return cube;
}

HsiCube augment(const HsiCube& patch, unsigned index) {
  if (patch.height != patch.width) {
    throw ContractError("augment: rotations need a square patch, got " + std::to_string(patch.height) + "x" +
                        std::to_string(patch.width));
  }
  if (index >= 8) throw ContractError("augment: index must be in 0..7");
  return transform(patch, index / 2, index % 2 == 1);
}

std::vector<HsiCube> augment8(const HsiCube& patch) {
  std::vector<HsiCube> out;
  for (unsigned i = 0; i < 8; ++i) out.push_back(augment(patch, i));
  return out;
}

HsiCube crop(const HsiCube& cube, std::uint32_t y0, std::uint32_t x0, std::uint32_t h, std::uint32_t w) {
  if (std::uint64_t{y0} + h > cube.height || std::uint64_t{x0} + w > cube.width) {
    throw ContractError("crop: window exceeds cube extents");
  }
  HsiCube out(h, w, cube.bands);
  out.band_valid = cube.band_valid;
  for (std::uint32_t y = 0; y < h; ++y)
    for (std::uint32_t c = 0; c < cube.bands; ++c)
      for (std::uint32_t x = 0; x < w; ++x) out.at(y, x, c) = cube.at(y0 + y, x0 + x, c);
  return out;
}

RawHeader parse_raw_header(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open header " + path.string());
  RawHeader h;
  bool seen[4] = {false, false, false, false};
  std::string text;
  int lineno = 0;
  while (std::getline(in, text)) {
    ++lineno;
    if (const auto hash = text.find('#'); hash != std::string::npos) text.resize(hash);
    text = trim(text);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError("header line " + std::to_string(lineno) + ": expected key = value", "", lineno);
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    auto as_u32 = [&]() {
      try {
        std::size_t used = 0;
        const unsigned long v = std::stoul(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return static_cast<std::uint32_t>(v);
      } catch (const std::exception&) {
        throw ConfigError("header line " + std::to_string(lineno) + ": bad value for " + key, key, lineno);
      }
    };
    if (key == "height") {
      h.height = as_u32();
      seen[0] = true;
    } else if (key == "width") {
      h.width = as_u32();
      seen[1] = true;
    } else if (key == "bands") {
      h.bands = as_u32();
      seen[2] = true;
    } else if (key == "interleave") {
      std::string v = value;
      std::transform(v.begin(), v.end(), v.begin(), [](unsigned char ch) { return std::tolower(ch); });
      if (v == "bil") h.interleave = Interleave::bil;
      else if (v == "bsq") h.interleave = Interleave::bsq;
      else if (v == "bip") h.interleave = Interleave::bip;
      else throw ConfigError("header line " + std::to_string(lineno) + ": unknown interleave " + value, key, lineno);
      seen[3] = true;
    } else {
      throw ConfigError("header line " + std::to_string(lineno) + ": unknown key " + key, key, lineno);
    }
  }
  const char* names[4] = {"height", "width", "bands", "interleave"};
  for (int i = 0; i < 4; ++i) {
    if (!seen[i]) throw ConfigError(std::string("header: missing key ") + names[i], names[i], 0);
  }
  return h;
}

HsiCube import_raw(const std::filesystem::path& raw, const RawHeader& hd) {
  const auto bytes = binio::read_file(raw);
  const std::uint64_t count = std::uint64_t{hd.height} * hd.width * hd.bands;
  if (bytes.size() != 4 * count) {
    throw FormatError("raw: " + raw.string() + " has " + std::to_string(bytes.size()) + " bytes, header implies " +
                      std::to_string(4 * count));
  }
  binio::Reader in(bytes, "raw");
  std::vector<float> flat(count);
  for (auto& v : flat) v = in.f32();
  HsiCube cube(hd.height, hd.width, hd.bands);
  const std::size_t H = hd.height, W = hd.width, C = hd.bands;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        std::size_t src = 0;
        switch (hd.interleave) {
          case Interleave::bil: src = (y * C + c) * W + x; break;
          case Interleave::bsq: src = (c * H + y) * W + x; break;
          case Interleave::bip: src = (y * W + x) * C + c; break;
        }
        cube.at(y, x, c) = flat[src];
      }
  // Bands that are identically zero are the zeroed-out channels.
  for (std::size_t c = 0; c < C; ++c) {
    bool any = false;
    for (std::size_t y = 0; y < H && !any; ++y)
      for (std::size_t x = 0; x < W && !any; ++x) any = cube.at(y, x, c) != 0.0f;
    cube.band_valid[c] = any ? 1 : 0;
  }
  return cube;
}

}  // namespace dpsr
