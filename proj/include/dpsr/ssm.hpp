#pragma once

#include <cstddef>
#include <string>

#include "dpsr/autograd.hpp"
#include "dpsr/tensor.hpp"

namespace dpsr {

// Along-track memory mechanism inside each cross-line fusion block.
enum class MemoryKind : unsigned { mamba = 0, causalconv = 1 };

std::string to_string(MemoryKind kind);
MemoryKind memory_kind_from_string(const std::string& s);

// Mamba block parameters. EF = expanded width, N = SSM state size,
// K = causal kernel length along track. The causalconv variant uses only the
// projections and the causal conv; the SSM tensors stay empty.
template <typename V>
struct MambaParamsT {
  V in_x_w;  // [EF, F] value branch
  V in_z_w;  // [EF, F] gate branch
  V conv_w;  // [EF, K]
  V conv_b;  // [EF]
  V dt_w;    // [EF, EF]
  V dt_b;    // [EF]
  V b_w;     // [N, EF]
  V c_w;     // [N, EF]
  V a_log;   // [EF, N], A = -exp(a_log)
  V d;       // [EF]
  V out_w;   // [F, EF]
};

template <typename V, typename Fn>
void visit_params(MambaParamsT<V>& p, MemoryKind kind, const std::string& prefix, Fn&& fn) {
  fn(prefix + "in_x_w", p.in_x_w);
  fn(prefix + "in_z_w", p.in_z_w);
  fn(prefix + "conv_w", p.conv_w);
  fn(prefix + "conv_b", p.conv_b);
  if (kind == MemoryKind::mamba) {
    fn(prefix + "dt_w", p.dt_w);
    fn(prefix + "dt_b", p.dt_b);
    fn(prefix + "b_w", p.b_w);
    fn(prefix + "c_w", p.c_w);
    fn(prefix + "a_log", p.a_log);
    fn(prefix + "d", p.d);
  }
  fn(prefix + "out_w", p.out_w);
}

// Recurrent state of one memory block for one stream.
template <typename T>
struct MambaState {
  // Most recent K value-branch lines [K, W, EF]; slot `head` holds the oldest.
  Tensor<T> conv_buffer;
  // SSM latent state [W, EF, N]; empty for the causalconv variant.
  Tensor<T> h;
  std::size_t head = 0;
  bool initialized = false;

  static MambaState zeros(std::size_t k, std::size_t width, std::size_t expanded, std::size_t state_size,
                          MemoryKind kind = MemoryKind::mamba);

  std::size_t element_count() const { return conv_buffer.size() + h.size(); }
};

// One along-track step: consumes the line features z [W, F] and returns the
// block output [W, F], updating s in place.
template <typename T>
Tensor<T> mamba_step(const Tensor<T>& z, const MambaParamsT<Tensor<T>>& p, MambaState<T>& s);

// Same value branch as mamba_step through the SiLU, then gated and projected
// without the SSM.
template <typename T>
Tensor<T> causalconv_step(const Tensor<T>& z, const MambaParamsT<Tensor<T>>& p, MambaState<T>& s);

// Whole-sequence forms over z_seq [H, W, F], equal to folding the step
// functions from a zero state.
template <typename V>
V mamba_scan(const V& z_seq, const MambaParamsT<V>& p);
template <typename V>
V causalconv_scan(const V& z_seq, const MambaParamsT<V>& p);

template <typename V>
V memory_scan(const V& z_seq, const MambaParamsT<V>& p, MemoryKind kind) {
  return kind == MemoryKind::mamba ? mamba_scan(z_seq, p) : causalconv_scan(z_seq, p);
}

template <typename T>
Tensor<T> memory_step(const Tensor<T>& z, const MambaParamsT<Tensor<T>>& p, MambaState<T>& s, MemoryKind kind) {
  return kind == MemoryKind::mamba ? mamba_step(z, p, s) : causalconv_step(z, p, s);
}

}  // namespace dpsr
