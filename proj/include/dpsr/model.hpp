#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dpsr/autograd.hpp"
#include "dpsr/blocks.hpp"
#include "dpsr/ssm.hpp"

namespace dpsr {

struct DpsrConfig {
  std::uint32_t bands = 0;         // C
  std::uint32_t features = 280;    // F
  std::uint32_t expansion = 1;     // E
  std::uint32_t state_size = 16;   // N
  std::uint32_t conv_kernel = 4;   // K
  std::uint32_t up_features = 64;  // f
  std::uint32_t scale = 4;         // r
  std::uint32_t n_clff = 2;
  MemoryKind memory_kind = MemoryKind::mamba;

  std::size_t expanded() const { return std::size_t{expansion} * features; }
  // Throws ContractError naming the first offending field.
  void validate() const;

  friend bool operator==(const DpsrConfig&, const DpsrConfig&) = default;
};

template <typename V>
struct ClffParamsT {
  NafParamsT<V> naf;
  MambaParamsT<V> memory;
};

template <typename V>
struct DpsrParamsT {
  DpsrConfig config;
  SfeParamsT<V> sfe;
  std::vector<ClffParamsT<V>> clff;
  UpsamplerParamsT<V> up;
};

using DpsrParams = DpsrParamsT<TensorF>;

// Visits every parameter tensor in the fixed serialization order.
template <typename V, typename Fn>
void visit_params(DpsrParamsT<V>& p, Fn&& fn) {
  visit_params(p.sfe, "sfe.", fn);
  for (std::size_t i = 0; i < p.clff.size(); ++i) {
    const std::string prefix = "clff" + std::to_string(i) + ".";
    visit_params(p.clff[i].naf, prefix + "naf.", fn);
    visit_params(p.clff[i].memory, p.config.memory_kind, prefix + "mem.", fn);
  }
  visit_params(p.up, "up.", fn);
}

template <typename V>
std::vector<std::pair<std::string, V*>> param_list(DpsrParamsT<V>& p) {
  std::vector<std::pair<std::string, V*>> out;
  visit_params(p, [&](const std::string& name, V& v) { out.emplace_back(name, &v); });
  return out;
}

template <typename V>
std::vector<std::pair<std::string, const V*>> param_list(const DpsrParamsT<V>& p) {
  std::vector<std::pair<std::string, const V*>> out;
  visit_params(const_cast<DpsrParamsT<V>&>(p), [&](const std::string& name, V& v) { out.emplace_back(name, &v); });
  return out;
}

// Builds a parameter set of another tensor kind with the same layout.
template <typename U, typename V, typename Fn>
DpsrParamsT<U> map_params(const DpsrParamsT<V>& src, Fn&& fn) {
  DpsrParamsT<U> dst;
  dst.config = src.config;
  dst.clff.resize(src.clff.size());
  auto from = param_list(src);
  auto to = param_list(dst);
  for (std::size_t i = 0; i < from.size(); ++i) *to[i].second = fn(*from[i].second);
  return dst;
}

template <typename U, typename T>
DpsrParamsT<Tensor<U>> cast_params(const DpsrParamsT<Tensor<T>>& p) {
  return map_params<Tensor<U>>(p, [](const Tensor<T>& t) { return t.template cast<U>(); });
}

// Registers every tensor as a tape leaf that requires gradients.
template <typename T>
DpsrParamsT<Var<T>> to_vars(Tape<T>& tape, const DpsrParamsT<Tensor<T>>& p) {
  return map_params<Var<T>>(p, [&](const Tensor<T>& t) { return tape.leaf(t, true); });
}

// Expected shape of every parameter for a config, in serialization order.
std::vector<std::pair<std::string, Shape>> param_shapes(const DpsrConfig& config);

// Kaiming-style uniform weights (bound 1/sqrt(fan_in)), zero biases, unit
// layer-norm gains, and SSM-specific init: softplus(dt_b) ~ U[0.001, 0.1],
// -A = 1..N per state index, D = 1.
DpsrParams init_params(const DpsrConfig& config, std::uint64_t seed);
DpsrParams zero_params(const DpsrConfig& config);

std::size_t param_count(const DpsrParams& p);

// Per-stream recurrent state. Width is frozen by the first line.
template <typename T>
struct StreamState {
  std::vector<MambaState<T>> memory;
  Tensor<T> prev_line;  // [W, C]
  std::size_t width = 0;
  std::size_t lines_consumed = 0;

  bool started() const { return lines_consumed > 0; }
  std::size_t element_count() const;
};

// Consumes LR line y ([W, C]). For y = 0 the network runs to prime the state
// and nothing is returned; for y >= 1 the r HR lines r(y-1) .. r(y-1)+r-1 are
// returned as [r, r*W, C].
template <typename T>
std::optional<Tensor<T>> dpsr_step(const Tensor<T>& line, const DpsrParamsT<Tensor<T>>& p, StreamState<T>& s);

// Whole-image path over an LR cube [H, W, C], H >= 2, returning
// [(H-1)*r, r*W, C]. Uses the sequence scans of the memory blocks.
template <typename T>
Tensor<T> dpsr_forward_image(const Tensor<T>& cube, const DpsrParamsT<Tensor<T>>& p);
template <typename T>
Var<T> dpsr_forward_image(const Tensor<T>& cube, const DpsrParamsT<Var<T>>& p, Tape<T>& tape);

// Bilinear part of the whole-image output: [(H-1)*r, r*W, C].
template <typename T>
Tensor<T> bilinear_image(const Tensor<T>& cube, std::size_t r);

// Checkpoint container: "DPSRW001", nine little-endian u32 config fields
// (C, F, E, N, K, f, r, n_clff, memory_kind), u32 tensor count, then per
// tensor a u32 rank, u32 extents and little-endian f32 data.
void save_params(const std::filesystem::path& path, const DpsrParams& p);
DpsrParams load_params(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_params(const DpsrParams& p);
DpsrParams deserialize_params(const std::vector<std::uint8_t>& bytes);

}  // namespace dpsr
