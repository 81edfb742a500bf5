#include "dpsr/ssm.hpp"

#include <cmath>

namespace dpsr {

std::string to_string(MemoryKind kind) { return kind == MemoryKind::mamba ? "mamba" : "causalconv"; }

MemoryKind memory_kind_from_string(const std::string& s) {
  if (s == "mamba") return MemoryKind::mamba;
  if (s == "causalconv") return MemoryKind::causalconv;
  throw ContractError("unknown memory kind '" + s + "' (expected mamba or causalconv)");
}

template <typename T>
MambaState<T> MambaState<T>::zeros(std::size_t k, std::size_t width, std::size_t expanded, std::size_t state_size,
                                   MemoryKind kind) {
  if (k == 0) throw ContractError("MambaState: kernel length must be >= 1");
  MambaState s;
  s.conv_buffer = Tensor<T>({k, width, expanded});
  if (kind == MemoryKind::mamba) s.h = Tensor<T>({width, expanded, state_size});
  s.initialized = true;
  return s;
}

namespace {

// Pushes the newest value-branch line and returns the causal convolution
// over the buffered K lines.
template <typename T>
Tensor<T> push_and_convolve(const Tensor<T>& xv, const MambaParamsT<Tensor<T>>& p, MambaState<T>& s) {
  if (!s.initialized) throw ContractError("memory step: state not initialized");
  const std::size_t k = s.conv_buffer.dim(0), w = s.conv_buffer.dim(1), ch = s.conv_buffer.dim(2);
  if (xv.shape() != Shape{w, ch}) {
    throw ContractError("memory step: line " + shape_str(xv.shape()) + " does not match state " +
                        shape_str(s.conv_buffer.shape()));
  }
  if (p.conv_w.shape() != Shape{ch, k}) throw ShapeError("memory step: conv weight " + shape_str(p.conv_w.shape()));
  const std::size_t plane = w * ch;
  std::copy(xv.vec().begin(), xv.vec().end(), s.conv_buffer.vec().begin() + static_cast<std::ptrdiff_t>(s.head * plane));
  s.head = (s.head + 1) % k;

  Tensor<T> u({w, ch});
  for (std::size_t px = 0; px < w; ++px) {
    for (std::size_t c = 0; c < ch; ++c) {
      T acc = p.conv_b[c];
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t slot = (s.head + j) % k;
        acc += p.conv_w[c * k + j] * s.conv_buffer[slot * plane + px * ch + c];
      }
      u[px * ch + c] = acc;
    }
  }
  return u;
}

}  // namespace

template <typename T>
Tensor<T> mamba_step(const Tensor<T>& z, const MambaParamsT<Tensor<T>>& p, MambaState<T>& s) {
  const Tensor<T> xv = linear(z, p.in_x_w);
  const Tensor<T> gate = linear(z, p.in_z_w);
  const Tensor<T> xs = silu(push_and_convolve(xv, p, s));

  const Tensor<T> dt = softplus(linear(xs, p.dt_w, &p.dt_b));
  const Tensor<T> b = linear(xs, p.b_w);
  const Tensor<T> c = linear(xs, p.c_w);
  const std::size_t w = xs.dim(0), dd = xs.dim(1), n = p.a_log.dim(1);
  if (s.h.shape() != Shape{w, dd, n}) throw ContractError("mamba_step: latent state shape " + shape_str(s.h.shape()));

  Tensor<T> y({w, dd});
  for (std::size_t px = 0; px < w; ++px) {
    for (std::size_t ch = 0; ch < dd; ++ch) {
      const T x = xs[px * dd + ch];
      const T delta = dt[px * dd + ch];
      T* hs = &s.h[(px * dd + ch) * n];
      T acc = 0;
      for (std::size_t st = 0; st < n; ++st) {
        const T a = -std::exp(p.a_log[ch * n + st]);
        hs[st] = std::exp(delta * a) * hs[st] + delta * b[px * n + st] * x;
        acc += c[px * n + st] * hs[st];
      }
      y[px * dd + ch] = acc + p.d[ch] * x;
    }
  }
  if (!s.h.all_finite()) throw NumericError("mamba_step: latent state became non-finite");
  return linear(mul(y, silu(gate)), p.out_w);
}

template <typename T>
Tensor<T> causalconv_step(const Tensor<T>& z, const MambaParamsT<Tensor<T>>& p, MambaState<T>& s) {
  const Tensor<T> xv = linear(z, p.in_x_w);
  const Tensor<T> gate = linear(z, p.in_z_w);
  const Tensor<T> xs = silu(push_and_convolve(xv, p, s));
  return linear(mul(xs, silu(gate)), p.out_w);
}

template <typename V>
V mamba_scan(const V& z_seq, const MambaParamsT<V>& p) {
  const V gate = linear(z_seq, p.in_z_w);
  const V xs = silu(causal_conv_lines(linear(z_seq, p.in_x_w), p.conv_w, &p.conv_b));
  const V dt = softplus(linear(xs, p.dt_w, &p.dt_b));
  const V y = selective_scan(xs, dt, p.a_log, linear(xs, p.b_w), linear(xs, p.c_w), p.d);
  return linear(mul(y, silu(gate)), p.out_w);
}

template <typename V>
V causalconv_scan(const V& z_seq, const MambaParamsT<V>& p) {
  const V gate = linear(z_seq, p.in_z_w);
  const V xs = silu(causal_conv_lines(linear(z_seq, p.in_x_w), p.conv_w, &p.conv_b));
  return linear(mul(xs, silu(gate)), p.out_w);
}

template struct MambaState<float>;
template struct MambaState<double>;
template Tensor<float> mamba_step(const Tensor<float>&, const MambaParamsT<Tensor<float>>&, MambaState<float>&);
template Tensor<double> mamba_step(const Tensor<double>&, const MambaParamsT<Tensor<double>>&, MambaState<double>&);
template Tensor<float> causalconv_step(const Tensor<float>&, const MambaParamsT<Tensor<float>>&, MambaState<float>&);
template Tensor<double> causalconv_step(const Tensor<double>&, const MambaParamsT<Tensor<double>>&,
                                        MambaState<double>&);

#define DPSR_INSTANTIATE_SCAN(V)                                     \
  template V mamba_scan(const V&, const MambaParamsT<V>&);           \
  template V causalconv_scan(const V&, const MambaParamsT<V>&);

DPSR_INSTANTIATE_SCAN(Tensor<float>)
DPSR_INSTANTIATE_SCAN(Tensor<double>)
DPSR_INSTANTIATE_SCAN(Var<float>)
DPSR_INSTANTIATE_SCAN(Var<double>)

}  // namespace dpsr
