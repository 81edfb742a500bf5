#include "dpsr/blocks.hpp"

namespace dpsr {

template <typename V>
V channel_attention(const V& x, const SfeParamsT<V>& p) {
  auto mlp = [&](const V& v) { return linear(relu(linear(v, p.att_w1, &p.att_b1)), p.att_w2, &p.att_b2); };
  const V weights = sigmoid(add(mlp(mean_pool_w(x)), mlp(max_pool_w(x))));
  return mul_bcast_w(x, weights);
}

template <typename V>
V sfe_forward(const V& x, const SfeParamsT<V>& p) {
  const V features = silu(layer_norm(conv1d(x, p.conv_w, &p.conv_b), p.ln_gamma, p.ln_beta));
  return channel_attention(features, p);
}

template <typename V>
V naf_forward(const V& z, const NafParamsT<V>& p) {
  V t = linear(layer_norm(z, p.ln1_gamma, p.ln1_beta), p.pw1_w, &p.pw1_b);
  t = simple_gate(depthwise_conv1d(t, p.dw_w, &p.dw_b));
  t = mul_bcast_w(t, linear(mean_pool_w(t), p.sca_w, &p.sca_b));
  const V y = add(z, linear(t, p.pw2_w, &p.pw2_b));

  V u = linear(layer_norm(y, p.ln2_gamma, p.ln2_beta), p.pw3_w, &p.pw3_b);
  u = linear(simple_gate(u), p.pw4_w, &p.pw4_b);
  return add(y, u);
}

template <typename V>
V upsample_line(const V& w, const UpsamplerParamsT<V>& p, std::size_t r) {
  const V shuffled = pixel_shuffle_1d(conv1d(w, p.expand_w, &p.expand_b), r);
  return conv1d(shuffled, p.restore_w, &p.restore_b);
}

template <typename T>
Tensor<T> bilinear_two_line(const Tensor<T>& prev, const Tensor<T>& curr, std::size_t r) {
  if (prev.rank() != 2 || prev.shape() != curr.shape()) {
    throw ShapeError("bilinear_two_line: lines must share shape [W, C], got " + shape_str(prev.shape()) + " and " +
                     shape_str(curr.shape()));
  }
  if (r == 0) throw ContractError("bilinear_two_line: r must be positive");
  const std::size_t w = prev.dim(0), ch = prev.dim(1);
  Tensor<T> out({r, r * w, ch});
  std::vector<T> blended(w * ch);
  for (std::size_t k = 0; k < r; ++k) {
    const T along = static_cast<T>(k) / static_cast<T>(r);
    for (std::size_t i = 0; i < w * ch; ++i) blended[i] = (T(1) - along) * prev[i] + along * curr[i];
    for (std::size_t col = 0; col < r * w; ++col) {
      const std::size_t j0 = col / r;
      const std::size_t j1 = std::min(j0 + 1, w - 1);
      const T across = static_cast<T>(col % r) / static_cast<T>(r);
      T* o = &out[(k * r * w + col) * ch];
      for (std::size_t c = 0; c < ch; ++c) o[c] = (T(1) - across) * blended[j0 * ch + c] + across * blended[j1 * ch + c];
    }
  }
  return out;
}

#define DPSR_INSTANTIATE_BLOCKS(V)                                          \
  template V channel_attention(const V&, const SfeParamsT<V>&);             \
  template V sfe_forward(const V&, const SfeParamsT<V>&);                   \
  template V naf_forward(const V&, const NafParamsT<V>&);                   \
  template V upsample_line(const V&, const UpsamplerParamsT<V>&, std::size_t);

DPSR_INSTANTIATE_BLOCKS(Tensor<float>)
DPSR_INSTANTIATE_BLOCKS(Tensor<double>)
DPSR_INSTANTIATE_BLOCKS(Var<float>)
DPSR_INSTANTIATE_BLOCKS(Var<double>)

template Tensor<float> bilinear_two_line(const Tensor<float>&, const Tensor<float>&, std::size_t);
template Tensor<double> bilinear_two_line(const Tensor<double>&, const Tensor<double>&, std::size_t);

}  // namespace dpsr
