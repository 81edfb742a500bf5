#pragma once

#include <utility>

#include "dpsr/tensor.hpp"

// Forward numeric primitives. Tensors carrying lines use the layout
// [..., W, C]: the across-track axis is second to last and channels are last.
// Leading axes are batch axes (e.g. the along-track line index).

namespace dpsr {

inline constexpr double kLayerNormEps = 1e-6;

// Same-size convolution along the across-track axis with zero padding.
// weight: [Cout, Cin, K], K odd. bias: [Cout] or nullptr.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias = nullptr);

// Per-channel convolution along the across-track axis, zero padded.
// weight: [C, K], K odd. bias: [C] or nullptr.
template <typename T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias = nullptr);

// Affine map over the last axis. weight: [Dout, Din].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias = nullptr);

// Normalizes over the last axis, then scales by gamma and shifts by beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = kLayerNormEps);

template <typename T>
Tensor<T> silu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> softplus(const Tensor<T>& x);
template <typename T>
Tensor<T> exp(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);

// x: [..., W, C], s: [..., 1, C]; multiplies every position by its batch's channel weights.
template <typename T>
Tensor<T> mul_bcast_w(const Tensor<T>& x, const Tensor<T>& s);

// [..., 2D] -> ([..., D], [..., D]).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_half(const Tensor<T>& x);

// SimpleGate: first half of the channels times the second half.
template <typename T>
Tensor<T> simple_gate(const Tensor<T>& x);

// [..., W, C] -> [..., 1, C].
template <typename T>
Tensor<T> mean_pool_w(const Tensor<T>& x);
template <typename T>
Tensor<T> max_pool_w(const Tensor<T>& x);

// [..., W, f*r*r] -> [..., r, r*W, f]. Channel q = (a*r + b)*f + c at column j
// lands on output line a, column j*r + b, feature c.
template <typename T>
Tensor<T> pixel_shuffle_1d(const Tensor<T>& x, std::size_t r);

// Rows [begin, end) of the leading axis.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);

template <typename T>
T sum(const Tensor<T>& x);

// Depthwise causal convolution along the leading (line) axis of [H, W, C]:
// out[t] = bias + sum_k weight[:, k] * x[t - (K-1) + k], zero before t = 0.
template <typename T>
Tensor<T> causal_conv_lines(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias = nullptr);

// Selective scan along the leading axis, independently per across-track pixel.
// xs, dt: [H, W, D]; a_log: [D, N]; b, c: [H, W, N]; d: [D]. With A = -exp(a_log):
//   h_t = exp(dt_t * A) * h_{t-1} + dt_t * B_t * x_t
//   y_t = <C_t, h_t> + D * x_t
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& xs, const Tensor<T>& dt, const Tensor<T>& a_log, const Tensor<T>& b,
                         const Tensor<T>& c, const Tensor<T>& d);

}  // namespace dpsr
