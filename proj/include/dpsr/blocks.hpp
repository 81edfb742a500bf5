#pragma once

#include <cstddef>
#include <string>

#include "dpsr/autograd.hpp"
#include "dpsr/tensor.hpp"

namespace dpsr {

inline constexpr std::size_t kAttentionReduction = 16;

// Hidden width of the channel-attention MLP.
inline std::size_t attention_hidden(std::size_t features) {
  return std::max<std::size_t>(1, features / kAttentionReduction);
}

// Shallow feature extraction: conv C->F (kernel 3), layer norm, SiLU, then
// CBAM-style channel attention with a shared MLP over average- and max-pooled
// descriptors.
template <typename V>
struct SfeParamsT {
  V conv_w;  // [F, C, 3]
  V conv_b;  // [F]
  V ln_gamma, ln_beta;  // [F]
  V att_w1;  // [F/16, F]
  V att_b1;  // [F/16]
  V att_w2;  // [F, F/16]
  V att_b2;  // [F]
};

// NAFBlock adapted to lines. Pointwise convolutions are stored as linear
// weights [Dout, Din].
//   y   = z + pw2(sca(gate(dw(pw1(ln1(z))))))
//   out = y + pw4(gate(pw3(ln2(y))))
template <typename V>
struct NafParamsT {
  V ln1_gamma, ln1_beta;  // [F]
  V pw1_w, pw1_b;         // [2F, F], [2F]
  V dw_w, dw_b;           // [2F, 3], [2F]
  V sca_w, sca_b;         // [F, F], [F]
  V pw2_w, pw2_b;         // [F, F], [F]
  V ln2_gamma, ln2_beta;  // [F]
  V pw3_w, pw3_b;         // [2F, F], [2F]
  V pw4_w, pw4_b;         // [F, F], [F]
};

template <typename V>
struct UpsamplerParamsT {
  V expand_w, expand_b;    // [f*r*r, F, 3], [f*r*r]
  V restore_w, restore_b;  // [C, f, 3], [C]
};

template <typename V, typename Fn>
void visit_params(SfeParamsT<V>& p, const std::string& prefix, Fn&& fn) {
  fn(prefix + "conv_w", p.conv_w);
  fn(prefix + "conv_b", p.conv_b);
  fn(prefix + "ln_gamma", p.ln_gamma);
  fn(prefix + "ln_beta", p.ln_beta);
  fn(prefix + "att_w1", p.att_w1);
  fn(prefix + "att_b1", p.att_b1);
  fn(prefix + "att_w2", p.att_w2);
  fn(prefix + "att_b2", p.att_b2);
}

template <typename V, typename Fn>
void visit_params(NafParamsT<V>& p, const std::string& prefix, Fn&& fn) {
  fn(prefix + "ln1_gamma", p.ln1_gamma);
  fn(prefix + "ln1_beta", p.ln1_beta);
  fn(prefix + "pw1_w", p.pw1_w);
  fn(prefix + "pw1_b", p.pw1_b);
  fn(prefix + "dw_w", p.dw_w);
  fn(prefix + "dw_b", p.dw_b);
  fn(prefix + "sca_w", p.sca_w);
  fn(prefix + "sca_b", p.sca_b);
  fn(prefix + "pw2_w", p.pw2_w);
  fn(prefix + "pw2_b", p.pw2_b);
  fn(prefix + "ln2_gamma", p.ln2_gamma);
  fn(prefix + "ln2_beta", p.ln2_beta);
  fn(prefix + "pw3_w", p.pw3_w);
  fn(prefix + "pw3_b", p.pw3_b);
  fn(prefix + "pw4_w", p.pw4_w);
  fn(prefix + "pw4_b", p.pw4_b);
}

template <typename V, typename Fn>
void visit_params(UpsamplerParamsT<V>& p, const std::string& prefix, Fn&& fn) {
  fn(prefix + "expand_w", p.expand_w);
  fn(prefix + "expand_b", p.expand_b);
  fn(prefix + "restore_w", p.restore_w);
  fn(prefix + "restore_b", p.restore_b);
}

// x: [..., W, C] -> [..., W, F].
template <typename V>
V sfe_forward(const V& x, const SfeParamsT<V>& p);

// Channel attention alone: x * sigmoid(mlp(avg_w(x)) + mlp(max_w(x))).
template <typename V>
V channel_attention(const V& x, const SfeParamsT<V>& p);

// z: [..., W, F] -> [..., W, F].
template <typename V>
V naf_forward(const V& z, const NafParamsT<V>& p);

// w: [..., W, F] -> [..., r, r*W, C]: expand conv, 1D pixel shuffle, then the
// restoring conv applied to each of the r output lines with shared weights.
template <typename V>
V upsample_line(const V& w, const UpsamplerParamsT<V>& p, std::size_t r);

// Two-line bilinear interpolator on a grid anchored at LR samples.
// HR line k (k = 0..r-1) blends prev and curr with weight k/r on curr;
// HR column i blends LR columns floor(i/r) and floor(i/r)+1 (clamped) with
// weight i/r - floor(i/r). prev, curr: [W, C] -> [r, r*W, C].
template <typename T>
Tensor<T> bilinear_two_line(const Tensor<T>& prev, const Tensor<T>& curr, std::size_t r);

}  // namespace dpsr
