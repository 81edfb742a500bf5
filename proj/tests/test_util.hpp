#pragma once

// Shared fixtures for the unit tests and the acceptance runner.

#include <cmath>
#include <cstring>
#include <random>
#include <string>

#include "dpsr/model.hpp"

namespace dpsr::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.vec()) v = static_cast<T>(u(rng));
  return t;
}

// Parameters with every entry O(1) so that all paths, including the SSM,
// carry gradients well above finite-difference noise. dt lands in roughly
// [0.3, 1.3] and A keeps its negative sign.
inline DpsrParamsT<TensorD> lively_params(const DpsrConfig& cfg, std::uint64_t seed, double weight_scale = 0.5) {
  std::mt19937_64 rng(seed);
  DpsrParamsT<TensorD> p = cast_params<double>(zero_params(cfg));
  for (auto& [name, t] : param_list(p)) {
    const auto ends = [&](const char* s) { return name.size() >= std::strlen(s) && name.rfind(s) == name.size() - std::strlen(s); };
    if (ends("gamma")) *t = random_tensor<double>(t->shape(), rng, 0.7, 1.3);
    else if (ends("a_log")) *t = random_tensor<double>(t->shape(), rng, -0.5, 0.7);
    else if (ends("dt_b")) *t = random_tensor<double>(t->shape(), rng, -0.5, 1.0);
    else if (ends(".d")) *t = random_tensor<double>(t->shape(), rng, 0.5, 1.5);
    else *t = random_tensor<double>(t->shape(), rng, -weight_scale, weight_scale);
  }
  return p;
}

inline DpsrConfig tiny_config(std::uint32_t c, std::uint32_t f, std::uint32_t n, std::uint32_t k, std::uint32_t r,
                              MemoryKind kind = MemoryKind::mamba) {
  DpsrConfig cfg;
  cfg.bands = c;
  cfg.features = f;
  cfg.state_size = n;
  cfg.conv_kernel = k;
  cfg.up_features = 4;
  cfg.scale = r;
  cfg.memory_kind = kind;
  return cfg;
}

// Folds dpsr_step over every line of an [H, W, C] cube and stacks the emitted
// groups into [(H-1)*r, r*W, C].
template <typename T>
Tensor<T> stream_image(const Tensor<T>& cube, const DpsrParamsT<Tensor<T>>& p) {
  const std::size_t H = cube.dim(0), W = cube.dim(1), C = cube.dim(2), r = p.config.scale;
  Tensor<T> out({(H - 1) * r, r * W, C});
  StreamState<T> s;
  const std::size_t line = W * C, group = r * r * W * C;
  for (std::size_t y = 0; y < H; ++y) {
    Tensor<T> ln({W, C}, std::vector<T>(cube.vec().begin() + y * line, cube.vec().begin() + (y + 1) * line));
    auto hr = dpsr_step(ln, p, s);
    if (y == 0) continue;
    std::copy(hr->vec().begin(), hr->vec().end(), out.vec().begin() + (y - 1) * group);
  }
  return out;
}

}  // namespace dpsr::testing
