#include "dpsr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dpsr/parallel.hpp"

namespace dpsr {

namespace {

// Splits [..., W, C] into (batch, W, C).
struct LineDims {
  std::size_t batch, width, channels;
};

LineDims line_dims(const Shape& s, const char* op) {
  if (s.size() < 2) throw ShapeError(std::string(op) + ": expected [..., W, C], got " + shape_str(s));
  const std::size_t c = s[s.size() - 1];
  const std::size_t w = s[s.size() - 2];
  std::size_t b = 1;
  for (std::size_t i = 0; i + 2 < s.size(); ++i) b *= s[i];
  return {b, w, c};
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
T sigmoid_scalar(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
T softplus_scalar(T v) {
  if (v > T(20)) return v;
  return std::log1p(std::exp(v));
}

template <typename T, typename F>
Tensor<T> map_unary(const Tensor<T>& x, F f) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias) {
  const auto [batch, width, cin] = line_dims(x.shape(), "conv1d");
  if (weight.rank() != 3) throw ShapeError("conv1d: weight must be [Cout, Cin, K], got " + shape_str(weight.shape()));
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin) {
    throw ShapeError("conv1d: weight expects " + std::to_string(weight.dim(1)) + " input channels, input has " +
                     std::to_string(cin));
  }
  if (k % 2 == 0) throw ShapeError("conv1d: same padding needs an odd kernel, got " + std::to_string(k));
  if (bias && bias->shape() != Shape{cout}) throw ShapeError("conv1d: bias shape " + shape_str(bias->shape()));

  Shape out_shape = x.shape();
  out_shape.back() = cout;
  Tensor<T> out(out_shape);
  const std::size_t pad = k / 2;
  const T* xd = x.data().data();
  const T* wd = weight.data().data();
  T* od = out.data().data();

  parallel_for(batch * width, [&](std::size_t begin, std::size_t end) {
    for (std::size_t bw = begin; bw < end; ++bw) {
      const std::size_t b = bw / width, w = bw % width;
      T* o = od + bw * cout;
      for (std::size_t co = 0; co < cout; ++co) {
        T acc = bias ? (*bias)[co] : T(0);
        const T* wk = wd + co * cin * k;
        for (std::size_t t = 0; t < k; ++t) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(w + t) - static_cast<std::ptrdiff_t>(pad);
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(width)) continue;
          const T* xi = xd + (b * width + static_cast<std::size_t>(src)) * cin;
          for (std::size_t ci = 0; ci < cin; ++ci) acc += xi[ci] * wk[ci * k + t];
        }
        o[co] = acc;
      }
    }
  }, 4);
  return out;
}

template <typename T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias) {
  const auto [batch, width, ch] = line_dims(x.shape(), "depthwise_conv1d");
  if (weight.rank() != 2 || weight.dim(0) != ch) {
    throw ShapeError("depthwise_conv1d: weight " + shape_str(weight.shape()) + " does not match " +
                     std::to_string(ch) + " channels");
  }
  const std::size_t k = weight.dim(1);
  if (k % 2 == 0) throw ShapeError("depthwise_conv1d: same padding needs an odd kernel");
  if (bias && bias->shape() != Shape{ch}) throw ShapeError("depthwise_conv1d: bias shape " + shape_str(bias->shape()));
  const std::size_t pad = k / 2;
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t w = 0; w < width; ++w) {
      T* o = &out[(b * width + w) * ch];
      for (std::size_t c = 0; c < ch; ++c) {
        T acc = bias ? (*bias)[c] : T(0);
        for (std::size_t t = 0; t < k; ++t) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(w + t) - static_cast<std::ptrdiff_t>(pad);
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(width)) continue;
          acc += x[(b * width + static_cast<std::size_t>(src)) * ch + c] * weight[c * k + t];
        }
        o[c] = acc;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias) {
  if (x.rank() < 1) throw ShapeError("linear: scalar input");
  if (weight.rank() != 2) throw ShapeError("linear: weight must be [Dout, Din], got " + shape_str(weight.shape()));
  const std::size_t din = x.dim(-1), dout = weight.dim(0);
  if (weight.dim(1) != din) {
    throw ShapeError("linear: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
  }
  if (bias && bias->shape() != Shape{dout}) throw ShapeError("linear: bias shape " + shape_str(bias->shape()));
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  Tensor<T> out(out_shape);
  const std::size_t rows = shape_numel(Shape(x.shape().begin(), x.shape().end() - 1));
  const T* xd = x.data().data();
  const T* wd = weight.data().data();
  T* od = out.data().data();
  parallel_for(rows, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const T* xi = xd + r * din;
      for (std::size_t o = 0; o < dout; ++o) {
        const T* wo = wd + o * din;
        T acc = bias ? (*bias)[o] : T(0);
        for (std::size_t i = 0; i < din; ++i) acc += xi[i] * wo[i];
        od[r * dout + o] = acc;
      }
    }
  }, 8);
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const std::size_t f = x.dim(-1);
  if (gamma.shape() != Shape{f} || beta.shape() != Shape{f}) {
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(f) + "]");
  }
  Tensor<T> out(x.shape());
  const std::size_t rows = f ? x.size() / f : 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xi = &x[r * f];
    T mean = 0;
    for (std::size_t i = 0; i < f; ++i) mean += xi[i];
    mean /= static_cast<T>(f);
    T var = 0;
    for (std::size_t i = 0; i < f; ++i) var += (xi[i] - mean) * (xi[i] - mean);
    var /= static_cast<T>(f);
    const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
    T* o = &out[r * f];
    for (std::size_t i = 0; i < f; ++i) o[i] = (xi[i] - mean) * inv * gamma[i] + beta[i];
  }
  return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return map_unary(x, [](T v) { return v * sigmoid_scalar(v); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return map_unary(x, [](T v) { return sigmoid_scalar(v); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return map_unary(x, [](T v) { return softplus_scalar(v); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return map_unary(x, [](T v) { return std::exp(v); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return map_unary(x, [](T v) { return v > T(0) ? v : T(0); });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return map_unary(a, [s](T v) { return v * s; });
}

template <typename T>
Tensor<T> mul_bcast_w(const Tensor<T>& x, const Tensor<T>& s) {
  const auto [batch, width, ch] = line_dims(x.shape(), "mul_bcast_w");
  Shape expect = x.shape();
  expect[expect.size() - 2] = 1;
  require_same_shape(s.shape(), expect, "mul_bcast_w");
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t w = 0; w < width; ++w)
      for (std::size_t c = 0; c < ch; ++c) out[(b * width + w) * ch + c] = x[(b * width + w) * ch + c] * s[b * ch + c];
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_half(const Tensor<T>& x) {
  if (x.rank() < 1) throw ShapeError("split_half: scalar input");
  const std::size_t c = x.dim(-1);
  if (c % 2 != 0) throw ShapeError("split_half: odd channel count " + std::to_string(c));
  const std::size_t h = c / 2;
  Shape s = x.shape();
  s.back() = h;
  Tensor<T> lo(s), hi(s);
  const std::size_t rows = c ? x.size() / c : 0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < h; ++i) {
      lo[r * h + i] = x[r * c + i];
      hi[r * h + i] = x[r * c + h + i];
    }
  }
  return {std::move(lo), std::move(hi)};
}

template <typename T>
Tensor<T> simple_gate(const Tensor<T>& x) {
  auto [lo, hi] = split_half(x);
  return mul(lo, hi);
}

template <typename T>
Tensor<T> mean_pool_w(const Tensor<T>& x) {
  const auto [batch, width, ch] = line_dims(x.shape(), "mean_pool_w");
  if (width == 0) throw ShapeError("mean_pool_w: empty width");
  Shape s = x.shape();
  s[s.size() - 2] = 1;
  Tensor<T> out(s);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      T acc = 0;
      for (std::size_t w = 0; w < width; ++w) acc += x[(b * width + w) * ch + c];
      out[b * ch + c] = acc / static_cast<T>(width);
    }
  }
  return out;
}

template <typename T>
Tensor<T> max_pool_w(const Tensor<T>& x) {
  const auto [batch, width, ch] = line_dims(x.shape(), "max_pool_w");
  if (width == 0) throw ShapeError("max_pool_w: empty width");
  Shape s = x.shape();
  s[s.size() - 2] = 1;
  Tensor<T> out(s);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      T m = x[b * width * ch + c];
      for (std::size_t w = 1; w < width; ++w) m = std::max(m, x[(b * width + w) * ch + c]);
      out[b * ch + c] = m;
    }
  }
  return out;
}

template <typename T>
Tensor<T> pixel_shuffle_1d(const Tensor<T>& x, std::size_t r) {
  const auto [batch, width, ch] = line_dims(x.shape(), "pixel_shuffle_1d");
  if (r == 0 || ch % (r * r) != 0) {
    throw ShapeError("pixel_shuffle_1d: channels " + std::to_string(ch) + " not divisible by r^2");
  }
  const std::size_t f = ch / (r * r);
  Shape s(x.shape().begin(), x.shape().end() - 2);
  s.insert(s.end(), {r, r * width, f});
  Tensor<T> out(s);
  for (std::size_t bt = 0; bt < batch; ++bt)
    for (std::size_t j = 0; j < width; ++j)
      for (std::size_t a = 0; a < r; ++a)
        for (std::size_t b = 0; b < r; ++b)
          for (std::size_t c = 0; c < f; ++c)
            out[((bt * r + a) * r * width + j * r + b) * f + c] = x[(bt * width + j) * ch + (a * r + b) * f + c];
  return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (x.rank() < 1 || begin > end || end > x.dim(0)) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                     shape_str(x.shape()));
  }
  const std::size_t row = x.dim(0) ? x.size() / x.dim(0) : 0;
  Shape s = x.shape();
  s[0] = end - begin;
  return Tensor<T>(s, std::vector<T>(x.vec().begin() + static_cast<std::ptrdiff_t>(begin * row),
                                     x.vec().begin() + static_cast<std::ptrdiff_t>(end * row)));
}

template <typename T>
T sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return acc;
}

template <typename T>
Tensor<T> causal_conv_lines(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias) {
  if (x.rank() != 3) throw ShapeError("causal_conv_lines: expected [H, W, C], got " + shape_str(x.shape()));
  const std::size_t h = x.dim(0), w = x.dim(1), ch = x.dim(2);
  if (weight.rank() != 2 || weight.dim(0) != ch) {
    throw ShapeError("causal_conv_lines: weight " + shape_str(weight.shape()) + " for " + std::to_string(ch) +
                     " channels");
  }
  if (bias && bias->shape() != Shape{ch}) throw ShapeError("causal_conv_lines: bias shape");
  const std::size_t k = weight.dim(1);
  const std::size_t plane = w * ch;
  Tensor<T> out(x.shape());
  for (std::size_t t = 0; t < h; ++t) {
    for (std::size_t p = 0; p < w; ++p) {
      for (std::size_t c = 0; c < ch; ++c) {
        T acc = bias ? (*bias)[c] : T(0);
        for (std::size_t j = 0; j < k; ++j) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(k - 1);
          if (src < 0) continue;
          acc += weight[c * k + j] * x[static_cast<std::size_t>(src) * plane + p * ch + c];
        }
        out[t * plane + p * ch + c] = acc;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& xs, const Tensor<T>& dt, const Tensor<T>& a_log, const Tensor<T>& b,
                         const Tensor<T>& c, const Tensor<T>& d) {
  if (xs.rank() != 3) throw ShapeError("selective_scan: xs must be [H, W, D]");
  const std::size_t h = xs.dim(0), w = xs.dim(1), dd = xs.dim(2);
  require_same_shape(dt.shape(), xs.shape(), "selective_scan dt");
  if (a_log.rank() != 2 || a_log.dim(0) != dd) throw ShapeError("selective_scan: a_log must be [D, N]");
  const std::size_t n = a_log.dim(1);
  require_same_shape(b.shape(), Shape{h, w, n}, "selective_scan B");
  require_same_shape(c.shape(), Shape{h, w, n}, "selective_scan C");
  require_same_shape(d.shape(), Shape{dd}, "selective_scan D");

  Tensor<T> a(a_log.shape());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(a_log[i]);
  Tensor<T> out(xs.shape());
  std::vector<T> state(w * dd * n, T(0));
  for (std::size_t t = 0; t < h; ++t) {
    for (std::size_t p = 0; p < w; ++p) {
      const std::size_t row = t * w + p;
      for (std::size_t ch = 0; ch < dd; ++ch) {
        const T x = xs[row * dd + ch];
        const T delta = dt[row * dd + ch];
        T* hs = &state[(p * dd + ch) * n];
        T y = 0;
        for (std::size_t s = 0; s < n; ++s) {
          hs[s] = std::exp(delta * a[ch * n + s]) * hs[s] + delta * b[row * n + s] * x;
          y += c[row * n + s] * hs[s];
        }
        out[row * dd + ch] = y + d[ch] * x;
      }
    }
  }
  return out;
}

#define DPSR_INSTANTIATE_OPS(T)                                                                                   \
  template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);                                \
  template Tensor<T> depthwise_conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);                      \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);                                \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);                    \
  template Tensor<T> silu(const Tensor<T>&);                                                                      \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                                   \
  template Tensor<T> softplus(const Tensor<T>&);                                                                  \
  template Tensor<T> exp(const Tensor<T>&);                                                                       \
  template Tensor<T> relu(const Tensor<T>&);                                                                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                     \
  template Tensor<T> scale(const Tensor<T>&, T);                                                                  \
  template Tensor<T> mul_bcast_w(const Tensor<T>&, const Tensor<T>&);                                             \
  template std::pair<Tensor<T>, Tensor<T>> split_half(const Tensor<T>&);                                          \
  template Tensor<T> simple_gate(const Tensor<T>&);                                                               \
  template Tensor<T> mean_pool_w(const Tensor<T>&);                                                               \
  template Tensor<T> max_pool_w(const Tensor<T>&);                                                                \
  template Tensor<T> pixel_shuffle_1d(const Tensor<T>&, std::size_t);                                             \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                                      \
  template T sum(const Tensor<T>&);                                                                               \
  template Tensor<T> causal_conv_lines(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);                     \
  template Tensor<T> selective_scan(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                    const Tensor<T>&, const Tensor<T>&);

DPSR_INSTANTIATE_OPS(float)
DPSR_INSTANTIATE_OPS(double)

}  // namespace dpsr
