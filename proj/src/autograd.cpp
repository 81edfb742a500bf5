#include "dpsr/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace dpsr {

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (std::size_t i : inputs) {
    if (i >= nodes_.size()) throw ContractError("tape: input node " + std::to_string(i) + " not recorded yet");
    n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
const Tensor<T>& Tape<T>::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
Tensor<T>& Tape<T>::grad_accum(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::zero_grad() {
  for (Node& n : nodes_) n.grad = Tensor<T>();
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.value().shape()));
  }
  zero_grad();
  std::vector<bool> reached(loss.id() + 1, false);
  reached[loss.id()] = true;
  grad_accum(loss.id()).fill(T(1));
  visits_ = 0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    if (!reached[i]) continue;
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward) continue;
    n.backward(*this, i);
    ++visits_;
    for (std::size_t in : n.inputs) reached[in] = true;
  }
}

template class Tape<float>;
template class Tape<double>;

namespace {

template <typename T>
struct Dims3 {
  std::size_t batch, width, ch;
};

template <typename T>
Dims3<T> dims3(const Shape& s) {
  std::size_t b = 1;
  for (std::size_t i = 0; i + 2 < s.size(); ++i) b *= s[i];
  return {b, s[s.size() - 2], s[s.size() - 1]};
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const Var<T>& x, Fwd fwd, Deriv deriv) {
  Tensor<T> out = fwd(x.value());
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {xi}, [xi, deriv](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xv = t.value(xi);
    const Tensor<T>& yv = t.value(self);
    Tensor<T>& gx = t.grad_accum(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
  });
}

template <typename T>
T sig(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias) {
  Tensor<T> out = conv1d(x.value(), weight.value(), bias ? &bias->value() : nullptr);
  const std::size_t xi = x.id(), wi = weight.id();
  const bool has_bias = bias != nullptr;
  const std::size_t bi = has_bias ? bias->id() : 0;
  std::vector<std::size_t> inputs{xi, wi};
  if (has_bias) inputs.push_back(bi);
  return x.tape().record(std::move(out), std::move(inputs), [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xv = t.value(xi);
    const Tensor<T>& wv = t.value(wi);
    const auto [batch, width, cin] = dims3<T>(xv.shape());
    const std::size_t cout = wv.dim(0), k = wv.dim(2), pad = k / 2;
    Tensor<T>* gx = t.requires_grad(xi) ? &t.grad_accum(xi) : nullptr;
    Tensor<T>* gw = t.requires_grad(wi) ? &t.grad_accum(wi) : nullptr;
    Tensor<T>* gb = has_bias && t.requires_grad(bi) ? &t.grad_accum(bi) : nullptr;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t w = 0; w < width; ++w) {
        for (std::size_t co = 0; co < cout; ++co) {
          const T go = g[(b * width + w) * cout + co];
          if (gb) (*gb)[co] += go;
          for (std::size_t tap = 0; tap < k; ++tap) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(w + tap) - static_cast<std::ptrdiff_t>(pad);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(width)) continue;
            const std::size_t xo = (b * width + static_cast<std::size_t>(src)) * cin;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const std::size_t wo = (co * cin + ci) * k + tap;
              if (gx) (*gx)[xo + ci] += go * wv[wo];
              if (gw) (*gw)[wo] += go * xv[xo + ci];
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> depthwise_conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias) {
  Tensor<T> out = depthwise_conv1d(x.value(), weight.value(), bias ? &bias->value() : nullptr);
  const std::size_t xi = x.id(), wi = weight.id();
  const bool has_bias = bias != nullptr;
  const std::size_t bi = has_bias ? bias->id() : 0;
  std::vector<std::size_t> inputs{xi, wi};
  if (has_bias) inputs.push_back(bi);
  return x.tape().record(std::move(out), std::move(inputs), [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xv = t.value(xi);
    const Tensor<T>& wv = t.value(wi);
    const auto [batch, width, ch] = dims3<T>(xv.shape());
    const std::size_t k = wv.dim(1), pad = k / 2;
    Tensor<T>* gx = t.requires_grad(xi) ? &t.grad_accum(xi) : nullptr;
    Tensor<T>* gw = t.requires_grad(wi) ? &t.grad_accum(wi) : nullptr;
    Tensor<T>* gb = has_bias && t.requires_grad(bi) ? &t.grad_accum(bi) : nullptr;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t w = 0; w < width; ++w) {
        for (std::size_t c = 0; c < ch; ++c) {
          const T go = g[(b * width + w) * ch + c];
          if (gb) (*gb)[c] += go;
          for (std::size_t tap = 0; tap < k; ++tap) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(w + tap) - static_cast<std::ptrdiff_t>(pad);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(width)) continue;
            const std::size_t xo = (b * width + static_cast<std::size_t>(src)) * ch + c;
            if (gx) (*gx)[xo] += go * wv[c * k + tap];
            if (gw) (*gw)[c * k + tap] += go * xv[xo];
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>* bias) {
  Tensor<T> out = linear(x.value(), weight.value(), bias ? &bias->value() : nullptr);
  const std::size_t xi = x.id(), wi = weight.id();
  const bool has_bias = bias != nullptr;
  const std::size_t bi = has_bias ? bias->id() : 0;
  std::vector<std::size_t> inputs{xi, wi};
  if (has_bias) inputs.push_back(bi);
  return x.tape().record(std::move(out), std::move(inputs), [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xv = t.value(xi);
    const Tensor<T>& wv = t.value(wi);
    const std::size_t dout = wv.dim(0), din = wv.dim(1);
    const std::size_t rows = shape_numel(Shape(xv.shape().begin(), xv.shape().end() - 1));
    Tensor<T>* gx = t.requires_grad(xi) ? &t.grad_accum(xi) : nullptr;
    Tensor<T>* gw = t.requires_grad(wi) ? &t.grad_accum(wi) : nullptr;
    Tensor<T>* gb = has_bias && t.requires_grad(bi) ? &t.grad_accum(bi) : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t o = 0; o < dout; ++o) {
        const T go = g[r * dout + o];
        if (gb) (*gb)[o] += go;
        if (go == T(0)) continue;
        for (std::size_t i = 0; i < din; ++i) {
          if (gx) (*gx)[r * din + i] += go * wv[o * din + i];
          if (gw) (*gw)[o * din + i] += go * xv[r * din + i];
        }
      }
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps) {
  Tensor<T> out = layer_norm(x.value(), gamma.value(), beta.value(), eps);
  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  return x.tape().record(std::move(out), {xi, gi, bi}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xv = t.value(xi);
    const Tensor<T>& gam = t.value(gi);
    const std::size_t f = xv.dim(-1);
    const std::size_t rows = f ? xv.size() / f : 0;
    Tensor<T>* gx = t.requires_grad(xi) ? &t.grad_accum(xi) : nullptr;
    Tensor<T>* gg = t.requires_grad(gi) ? &t.grad_accum(gi) : nullptr;
    Tensor<T>* gb = t.requires_grad(bi) ? &t.grad_accum(bi) : nullptr;
    std::vector<T> xhat(f), dxhat(f);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = &xv[r * f];
      T mean = 0;
      for (std::size_t i = 0; i < f; ++i) mean += xr[i];
      mean /= static_cast<T>(f);
      T var = 0;
      for (std::size_t i = 0; i < f; ++i) var += (xr[i] - mean) * (xr[i] - mean);
      var /= static_cast<T>(f);
      const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
      T mean_d = 0, mean_dx = 0;
      for (std::size_t i = 0; i < f; ++i) {
        xhat[i] = (xr[i] - mean) * inv;
        const T go = g[r * f + i];
        if (gg) (*gg)[i] += go * xhat[i];
        if (gb) (*gb)[i] += go;
        dxhat[i] = go * gam[i];
        mean_d += dxhat[i];
        mean_dx += dxhat[i] * xhat[i];
      }
      if (!gx) continue;
      mean_d /= static_cast<T>(f);
      mean_dx /= static_cast<T>(f);
      for (std::size_t i = 0; i < f; ++i) (*gx)[r * f + i] += inv * (dxhat[i] - mean_d - xhat[i] * mean_dx);
    }
  });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  return unary(x, [](const Tensor<T>& v) { return silu(v); },
               [](T v, T) {
                 const T s = sig(v);
                 return s * (T(1) + v * (T(1) - s));
               });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary(x, [](const Tensor<T>& v) { return sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
  return unary(x, [](const Tensor<T>& v) { return softplus(v); }, [](T v, T) { return sig(v); });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return unary(x, [](const Tensor<T>& v) { return exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary(x, [](const Tensor<T>& v) { return relu(v); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = add(a.value(), b.value());
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {ai, bi}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    for (std::size_t id : {ai, bi}) {
      if (!t.requires_grad(id)) continue;
      Tensor<T>& gi = t.grad_accum(id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = mul(a.value(), b.value());
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {ai, bi}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& av = t.value(ai);
    const Tensor<T>& bv = t.value(bi);
    if (t.requires_grad(ai)) {
      Tensor<T>& ga = t.grad_accum(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(bi)) {
      Tensor<T>& gb = t.grad_accum(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return unary(a, [s](const Tensor<T>& v) { return scale(v, s); }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_const(const Var<T>& a, const Tensor<T>& c) {
  Tensor<T> out = add(a.value(), c);
  const std::size_t ai = a.id();
  return a.tape().record(std::move(out), {ai}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ga = t.grad_accum(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename T>
Var<T> mul_bcast_w(const Var<T>& x, const Var<T>& s) {
  Tensor<T> out = mul_bcast_w(x.value(), s.value());
  const std::size_t xi = x.id(), si = s.id();
  return x.tape().record(std::move(out), {xi, si}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xv = t.value(xi);
    const Tensor<T>& sv = t.value(si);
    const auto [batch, width, ch] = dims3<T>(xv.shape());
    Tensor<T>* gx = t.requires_grad(xi) ? &t.grad_accum(xi) : nullptr;
    Tensor<T>* gs = t.requires_grad(si) ? &t.grad_accum(si) : nullptr;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t w = 0; w < width; ++w)
        for (std::size_t c = 0; c < ch; ++c) {
          const std::size_t i = (b * width + w) * ch + c;
          if (gx) (*gx)[i] += g[i] * sv[b * ch + c];
          if (gs) (*gs)[b * ch + c] += g[i] * xv[i];
        }
  });
}

template <typename T>
std::pair<Var<T>, Var<T>> split_half(const Var<T>& x) {
  auto [lo, hi] = split_half(x.value());
  const std::size_t xi = x.id();
  auto make = [&](Tensor<T> part, std::size_t offset) {
    return x.tape().record(std::move(part), {xi}, [=](Tape<T>& t, std::size_t self) {
      const Tensor<T>& g = t.grad(self);
      Tensor<T>& gx = t.grad_accum(xi);
      const std::size_t h = g.dim(-1), c = 2 * h;
      const std::size_t rows = h ? g.size() / h : 0;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < h; ++i) gx[r * c + offset + i] += g[r * h + i];
    });
  };
  const std::size_t half = x.value().dim(-1) / 2;
  Var<T> a = make(std::move(lo), 0);
  Var<T> b = make(std::move(hi), half);
  return {a, b};
}

template <typename T>
Var<T> simple_gate(const Var<T>& x) {
  auto [lo, hi] = split_half(x);
  return mul(lo, hi);
}

template <typename T>
Var<T> mean_pool_w(const Var<T>& x) {
  Tensor<T> out = mean_pool_w(x.value());
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {xi}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad_accum(xi);
    const auto [batch, width, ch] = dims3<T>(gx.shape());
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t w = 0; w < width; ++w)
        for (std::size_t c = 0; c < ch; ++c) gx[(b * width + w) * ch + c] += g[b * ch + c] / static_cast<T>(width);
  });
}

template <typename T>
Var<T> max_pool_w(const Var<T>& x) {
  Tensor<T> out = max_pool_w(x.value());
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {xi}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xv = t.value(xi);
    Tensor<T>& gx = t.grad_accum(xi);
    const auto [batch, width, ch] = dims3<T>(xv.shape());
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < ch; ++c) {
        std::size_t best = 0;
        for (std::size_t w = 1; w < width; ++w)
          if (xv[(b * width + w) * ch + c] > xv[(b * width + best) * ch + c]) best = w;
        gx[(b * width + best) * ch + c] += g[b * ch + c];
      }
  });
}

template <typename T>
Var<T> pixel_shuffle_1d(const Var<T>& x, std::size_t r) {
  Tensor<T> out = pixel_shuffle_1d(x.value(), r);
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {xi}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad_accum(xi);
    const auto [batch, width, ch] = dims3<T>(gx.shape());
    const std::size_t f = ch / (r * r);
    for (std::size_t bt = 0; bt < batch; ++bt)
      for (std::size_t j = 0; j < width; ++j)
        for (std::size_t a = 0; a < r; ++a)
          for (std::size_t b = 0; b < r; ++b)
            for (std::size_t c = 0; c < f; ++c)
              gx[(bt * width + j) * ch + (a * r + b) * f + c] += g[((bt * r + a) * r * width + j * r + b) * f + c];
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t end) {
  Tensor<T> out = slice_rows(x.value(), begin, end);
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {xi}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad_accum(xi);
    const std::size_t row = gx.dim(0) ? gx.size() / gx.dim(0) : 0;
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * row + i] += g[i];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {xi}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad_accum(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  Tensor<T> out = Tensor<T>::scalar(sum(x.value()));
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {xi}, [=](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    Tensor<T>& gx = t.grad_accum(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

template <typename T>
Var<T> causal_conv_lines(const Var<T>& x, const Var<T>& weight, const Var<T>* bias) {
  Tensor<T> out = causal_conv_lines(x.value(), weight.value(), bias ? &bias->value() : nullptr);
  const std::size_t xi = x.id(), wi = weight.id();
  const bool has_bias = bias != nullptr;
  const std::size_t bi = has_bias ? bias->id() : 0;
  std::vector<std::size_t> inputs{xi, wi};
  if (has_bias) inputs.push_back(bi);
  return x.tape().record(std::move(out), std::move(inputs), [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xv = t.value(xi);
    const Tensor<T>& wv = t.value(wi);
    const std::size_t h = xv.dim(0), w = xv.dim(1), ch = xv.dim(2), k = wv.dim(1);
    const std::size_t plane = w * ch;
    Tensor<T>* gx = t.requires_grad(xi) ? &t.grad_accum(xi) : nullptr;
    Tensor<T>* gw = t.requires_grad(wi) ? &t.grad_accum(wi) : nullptr;
    Tensor<T>* gb = has_bias && t.requires_grad(bi) ? &t.grad_accum(bi) : nullptr;
    for (std::size_t tt = 0; tt < h; ++tt)
      for (std::size_t p = 0; p < w; ++p)
        for (std::size_t c = 0; c < ch; ++c) {
          const T go = g[tt * plane + p * ch + c];
          if (gb) (*gb)[c] += go;
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(tt + j) - static_cast<std::ptrdiff_t>(k - 1);
            if (src < 0) continue;
            const std::size_t xo = static_cast<std::size_t>(src) * plane + p * ch + c;
            if (gx) (*gx)[xo] += go * wv[c * k + j];
            if (gw) (*gw)[c * k + j] += go * xv[xo];
          }
        }
  });
}

template <typename T>
Var<T> selective_scan(const Var<T>& xs, const Var<T>& dt, const Var<T>& a_log, const Var<T>& b, const Var<T>& c,
                      const Var<T>& d) {
  Tensor<T> out = selective_scan(xs.value(), dt.value(), a_log.value(), b.value(), c.value(), d.value());
  const std::size_t xi = xs.id(), ti = dt.id(), ai = a_log.id(), bi = b.id(), ci = c.id(), di = d.id();
  return xs.tape().record(std::move(out), {xi, ti, ai, bi, ci, di}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& gy = t.grad(self);
    const Tensor<T>& xv = t.value(xi);
    const Tensor<T>& tv = t.value(ti);
    const Tensor<T>& alv = t.value(ai);
    const Tensor<T>& bv = t.value(bi);
    const Tensor<T>& cv = t.value(ci);
    const Tensor<T>& dv = t.value(di);
    const std::size_t h = xv.dim(0), w = xv.dim(1), dd = xv.dim(2), n = alv.dim(1);

    std::vector<T> a(alv.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(alv[i]);

    // Forward states, history[t] holds h_t for every (pixel, channel, state).
    const std::size_t state_size = w * dd * n;
    std::vector<T> history((h + 1) * state_size, T(0));
    for (std::size_t tt = 0; tt < h; ++tt) {
      const T* prev = &history[tt * state_size];
      T* cur = &history[(tt + 1) * state_size];
      for (std::size_t p = 0; p < w; ++p) {
        const std::size_t row = tt * w + p;
        for (std::size_t ch = 0; ch < dd; ++ch) {
          const T x = xv[row * dd + ch];
          const T delta = tv[row * dd + ch];
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t si = (p * dd + ch) * n + s;
            cur[si] = std::exp(delta * a[ch * n + s]) * prev[si] + delta * bv[row * n + s] * x;
          }
        }
      }
    }

    Tensor<T>* gx = t.requires_grad(xi) ? &t.grad_accum(xi) : nullptr;
    Tensor<T>* gt = t.requires_grad(ti) ? &t.grad_accum(ti) : nullptr;
    Tensor<T>* ga = t.requires_grad(ai) ? &t.grad_accum(ai) : nullptr;
    Tensor<T>* gb = t.requires_grad(bi) ? &t.grad_accum(bi) : nullptr;
    Tensor<T>* gc = t.requires_grad(ci) ? &t.grad_accum(ci) : nullptr;
    Tensor<T>* gd = t.requires_grad(di) ? &t.grad_accum(di) : nullptr;
    std::vector<T> grad_a(a.size(), T(0));
    std::vector<T> adj(state_size, T(0));  // dL/dh_t, carried backwards
    for (std::size_t tt = h; tt-- > 0;) {
      const T* prev = &history[tt * state_size];
      const T* cur = &history[(tt + 1) * state_size];
      for (std::size_t p = 0; p < w; ++p) {
        const std::size_t row = tt * w + p;
        for (std::size_t ch = 0; ch < dd; ++ch) {
          const std::size_t xo = row * dd + ch;
          const T x = xv[xo];
          const T delta = tv[xo];
          const T go = gy[xo];
          if (gd) (*gd)[ch] += go * x;
          T dx = go * dv[ch];
          T ddelta = 0;
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t si = (p * dd + ch) * n + s;
            const T as = a[ch * n + s];
            const T abar = std::exp(delta * as);
            if (gc) (*gc)[row * n + s] += go * cur[si];
            const T adj_h = adj[si] + go * cv[row * n + s];
            const T g_abar = adj_h * prev[si] * abar;
            ddelta += g_abar * as + adj_h * bv[row * n + s] * x;
            grad_a[ch * n + s] += g_abar * delta;
            if (gb) (*gb)[row * n + s] += adj_h * delta * x;
            dx += adj_h * delta * bv[row * n + s];
            adj[si] = adj_h * abar;
          }
          if (gx) (*gx)[xo] += dx;
          if (gt) (*gt)[xo] += ddelta;
        }
      }
    }
    if (ga) {
      for (std::size_t i = 0; i < a.size(); ++i) (*ga)[i] += grad_a[i] * a[i];
    }
  });
}

double grad_check(const GradCheckFn& f, const std::vector<Tensor<double>>& params, double step) {
  if (!(step > 0.0)) throw ContractError("grad_check: step must be positive");
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.leaf(p, true));
    Var<double> loss = f(tape, vars);
    if (!loss.value().all_finite()) throw NumericError("grad_check: non-finite loss");
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(v.grad());
  }

  auto eval = [&](const std::vector<Tensor<double>>& ps) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    vars.reserve(ps.size());
    for (const auto& p : ps) vars.push_back(tape.constant(p));
    const double v = f(tape, vars).value().item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite value under perturbation");
    return v;
  };

  // Error per tensor is normalized by that tensor's largest gradient magnitude,
  // so entries whose true gradient is ~0 do not turn difference noise into
  // huge relative errors.
  std::vector<Tensor<double>> work = params;
  double worst = 0.0;
  for (std::size_t pi = 0; pi < work.size(); ++pi) {
    double max_err = 0.0, scale = 1e-8;
    for (std::size_t i = 0; i < work[pi].size(); ++i) {
      const double orig = work[pi][i];
      work[pi][i] = orig + step;
      const double up = eval(work);
      work[pi][i] = orig - step;
      const double down = eval(work);
      work[pi][i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double an = analytic[pi][i];
      if (!std::isfinite(an)) throw NumericError("grad_check: non-finite analytic gradient");
      max_err = std::max(max_err, std::abs(an - numeric));
      scale = std::max({scale, std::abs(an), std::abs(numeric)});
    }
    worst = std::max(worst, max_err / scale);
  }
  return worst;
}

#define DPSR_INSTANTIATE_VAR_OPS(T)                                                                              \
  template Var<T> conv1d(const Var<T>&, const Var<T>&, const Var<T>*);                                           \
  template Var<T> depthwise_conv1d(const Var<T>&, const Var<T>&, const Var<T>*);                                 \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>*);                                           \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, double);                               \
  template Var<T> silu(const Var<T>&);                                                                           \
  template Var<T> sigmoid(const Var<T>&);                                                                        \
  template Var<T> softplus(const Var<T>&);                                                                       \
  template Var<T> exp(const Var<T>&);                                                                            \
  template Var<T> relu(const Var<T>&);                                                                           \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                             \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                             \
  template Var<T> scale(const Var<T>&, T);                                                                       \
  template Var<T> add_const(const Var<T>&, const Tensor<T>&);                                                    \
  template Var<T> mul_bcast_w(const Var<T>&, const Var<T>&);                                                     \
  template std::pair<Var<T>, Var<T>> split_half(const Var<T>&);                                                  \
  template Var<T> simple_gate(const Var<T>&);                                                                    \
  template Var<T> mean_pool_w(const Var<T>&);                                                                    \
  template Var<T> max_pool_w(const Var<T>&);                                                                     \
  template Var<T> pixel_shuffle_1d(const Var<T>&, std::size_t);                                                  \
  template Var<T> slice_rows(const Var<T>&, std::size_t, std::size_t);                                           \
  template Var<T> reshape(const Var<T>&, Shape);                                                                 \
  template Var<T> sum(const Var<T>&);                                                                            \
  template Var<T> causal_conv_lines(const Var<T>&, const Var<T>&, const Var<T>*);                                \
  template Var<T> selective_scan(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,      \
                                 const Var<T>&);

DPSR_INSTANTIATE_VAR_OPS(float)
DPSR_INSTANTIATE_VAR_OPS(double)

}  // namespace dpsr
