#include <doctest.h>

#include <cmath>

#include "dpsr/autograd.hpp"
#include "dpsr/ops.hpp"
#include "test_util.hpp"

using namespace dpsr;
using dpsr::testing::random_tensor;

TEST_CASE("tensor shape checks") {
  CHECK_THROWS_AS(TensorF(Shape{2, 3}, std::vector<float>(5)), ShapeError);
  TensorF t({2, 3});
  t.at({1, 2}) = 4.f;
  CHECK(t[5] == 4.f);
  CHECK_THROWS_AS(t.at({2, 0}), ShapeError);
  CHECK(t.dim(-1) == 3);
  CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
  CHECK_THROWS_AS(t.item(), ShapeError);
  CHECK(TensorF::scalar(2.f).item() == 2.f);
}

TEST_CASE("conv1d matches a direct loop") {
  std::mt19937_64 rng(1);
  auto x = random_tensor<double>({2, 5, 3}, rng);
  auto w = random_tensor<double>({4, 3, 3}, rng);
  auto b = random_tensor<double>({4}, rng);
  auto y = conv1d(x, w, &b);
  REQUIRE(y.shape() == Shape{2, 5, 4});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t o = 0; o < 4; ++o) {
        double acc = b[o];
        for (std::size_t c = 0; c < 3; ++c)
          for (int k = 0; k < 3; ++k) {
            const int j = static_cast<int>(i) + k - 1;
            if (j >= 0 && j < 5) acc += w.at({o, c, std::size_t(k)}) * x.at({n, std::size_t(j), c});
          }
        CHECK(y.at({n, i, o}) == doctest::Approx(acc).epsilon(1e-12));
      }
  CHECK_THROWS_AS(conv1d(x, random_tensor<double>({4, 2, 3}, rng)), ShapeError);
}

TEST_CASE("depthwise conv and linear") {
  TensorD x({3, 2}, {1, 10, 2, 20, 3, 30});
  TensorD w({2, 3}, {1, 1, 1, 0, 1, 0});
  auto y = depthwise_conv1d(x, w);
  CHECK(y.vec() == std::vector<double>{3, 10, 6, 20, 5, 30});

  TensorD lw({1, 2}, {2, -1});
  TensorD lb({1}, {0.5});
  auto z = linear(x, lw, &lb);
  CHECK(z.vec() == std::vector<double>{-7.5, -15.5, -23.5});
}

TEST_CASE("layer norm normalizes the last axis") {
  TensorD x({1, 4}, {1, 2, 3, 4});
  TensorD g({4}, 1.0), b({4}, 0.0);
  auto y = layer_norm(x, g, b, 0.0);
  const double sd = std::sqrt(1.25);
  CHECK(y[0] == doctest::Approx(-1.5 / sd));
  CHECK(y[3] == doctest::Approx(1.5 / sd));
  // Scale invariance of the normalized part.
  auto y2 = layer_norm(scale(x, 7.0), g, b, 0.0);
  CHECK(max_rel_diff(y2, y) < 1e-12);
}

TEST_CASE("pointwise activations") {
  TensorD x({3}, {-2, 0, 3});
  auto s = silu(x);
  CHECK(s[0] == doctest::Approx(-2 / (1 + std::exp(2.0))));
  CHECK(s[1] == 0.0);
  CHECK(softplus(x)[2] == doctest::Approx(std::log1p(std::exp(3.0))));
  CHECK(sigmoid(x)[1] == 0.5);
  CHECK(relu(x).vec() == std::vector<double>{0, 0, 3});
  CHECK(simple_gate(TensorD({1, 4}, {1, 2, 3, 4})).vec() == std::vector<double>{3, 8});
}

TEST_CASE("pooling over width") {
  TensorD x({2, 3, 2}, {1, 5, 2, 4, 3, 6, 0, 0, -1, 1, -2, 2});
  auto m = mean_pool_w(x);
  REQUIRE(m.shape() == Shape{2, 1, 2});
  CHECK(m.vec() == std::vector<double>{2, 5, -1, 1});
  CHECK(max_pool_w(x).vec() == std::vector<double>{3, 6, 0, 2});
}

TEST_CASE("pixel shuffle follows the index formula") {
  const std::size_t W = 3, f = 2, r = 3;
  TensorD x({W, f * r * r});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  auto y = pixel_shuffle_1d(x, r);
  REQUIRE(y.shape() == Shape{r, r * W, f});
  for (std::size_t j = 0; j < W; ++j)
    for (std::size_t a = 0; a < r; ++a)
      for (std::size_t b = 0; b < r; ++b)
        for (std::size_t c = 0; c < f; ++c) CHECK(y.at({a, j * r + b, c}) == x.at({j, (a * r + b) * f + c}));
}

TEST_CASE("causal conv over lines") {
  TensorD x({4, 1, 1}, {1, 2, 3, 4});
  TensorD w({1, 2}, {10, 1});
  auto y = causal_conv_lines(x, w);
  // out[t] = 10 x[t-1] + x[t]
  CHECK(y.vec() == std::vector<double>{1, 12, 23, 34});
}

TEST_CASE("selective scan matches the recurrence") {
  std::mt19937_64 rng(2);
  const std::size_t H = 5, W = 2, D = 3, N = 2;
  auto xs = random_tensor<double>({H, W, D}, rng);
  auto dt = random_tensor<double>({H, W, D}, rng, 0.01, 1.0);
  auto al = random_tensor<double>({D, N}, rng);
  auto b = random_tensor<double>({H, W, N}, rng);
  auto c = random_tensor<double>({H, W, N}, rng);
  auto d = random_tensor<double>({D}, rng);
  auto y = selective_scan(xs, dt, al, b, c, d);
  for (std::size_t w = 0; w < W; ++w)
    for (std::size_t e = 0; e < D; ++e) {
      std::vector<double> h(N, 0.0);
      for (std::size_t t = 0; t < H; ++t) {
        double out = d[e] * xs.at({t, w, e});
        for (std::size_t n = 0; n < N; ++n) {
          const double A = -std::exp(al.at({e, n}));
          h[n] = std::exp(dt.at({t, w, e}) * A) * h[n] + dt.at({t, w, e}) * b.at({t, w, n}) * xs.at({t, w, e});
          out += c.at({t, w, n}) * h[n];
        }
        CHECK(y.at({t, w, e}) == doctest::Approx(out).epsilon(1e-12));
      }
    }
}

namespace {

using Fn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

double check_weighted(const std::function<Var<double>(const std::vector<Var<double>>&)>& op,
                      const std::vector<TensorD>& inputs, std::uint64_t seed) {
  // A random linear readout makes every output element matter.
  std::mt19937_64 rng(seed);
  std::optional<TensorD> wts;
  Fn f = [&](Tape<double>& tape, const std::vector<Var<double>>& v) {
    Var<double> out = op(v);
    if (!wts) wts = random_tensor<double>(out.shape(), rng);
    return sum(mul(out, tape.constant(*wts)));
  };
  return grad_check(f, inputs);
}

}  // namespace

TEST_CASE("taped ops pass finite-difference checks") {
  std::mt19937_64 rng(3);
  auto x = random_tensor<double>({2, 4, 3}, rng);
  auto w = random_tensor<double>({2, 3, 3}, rng);
  auto b = random_tensor<double>({2}, rng);
  using V = std::vector<Var<double>>;
  CHECK(check_weighted([](const V& v) { return conv1d(v[0], v[1], &v[2]); }, {x, w, b}, 1) < 1e-6);
  CHECK(check_weighted([](const V& v) { return depthwise_conv1d(v[0], v[1], &v[2]); },
                       {x, random_tensor<double>({3, 3}, rng), random_tensor<double>({3}, rng)}, 2) < 1e-6);
  CHECK(check_weighted([](const V& v) { return linear(v[0], v[1], &v[2]); },
                       {x, random_tensor<double>({2, 3}, rng), b}, 3) < 1e-6);
  CHECK(check_weighted([](const V& v) { return layer_norm(v[0], v[1], v[2]); },
                       {x, random_tensor<double>({3}, rng), random_tensor<double>({3}, rng)}, 4) < 1e-6);
  CHECK(check_weighted([](const V& v) { return silu(v[0]); }, {x}, 5) < 1e-6);
  CHECK(check_weighted([](const V& v) { return sigmoid(v[0]); }, {x}, 6) < 1e-6);
  CHECK(check_weighted([](const V& v) { return softplus(v[0]); }, {x}, 7) < 1e-6);
  CHECK(check_weighted([](const V& v) { return exp(v[0]); }, {x}, 8) < 1e-6);
  CHECK(check_weighted([](const V& v) { return mul(v[0], v[1]); }, {x, random_tensor<double>({2, 4, 3}, rng)}, 9) <
        1e-6);
  CHECK(check_weighted([](const V& v) { return mul_bcast_w(v[0], v[1]); },
                       {x, random_tensor<double>({2, 1, 3}, rng)}, 10) < 1e-6);
  auto x4 = random_tensor<double>({2, 3, 4}, rng);
  CHECK(check_weighted([](const V& v) { return simple_gate(v[0]); }, {x4}, 11) < 1e-6);
  CHECK(check_weighted([](const V& v) { return mean_pool_w(v[0]); }, {x}, 12) < 1e-6);
  CHECK(check_weighted([](const V& v) { return max_pool_w(v[0]); }, {x}, 13) < 1e-6);
  CHECK(check_weighted([](const V& v) { return pixel_shuffle_1d(v[0], 2); },
                       {random_tensor<double>({3, 8}, rng)}, 14) < 1e-6);
  CHECK(check_weighted([](const V& v) { return slice_rows(v[0], 1, 2); }, {x}, 15) < 1e-6);
  CHECK(check_weighted([](const V& v) { return causal_conv_lines(v[0], v[1], &v[2]); },
                       {random_tensor<double>({4, 2, 3}, rng), random_tensor<double>({3, 2}, rng),
                        random_tensor<double>({3}, rng)},
                       16) < 1e-6);
  const std::size_t H = 4, W = 2, D = 3, N = 2;
  CHECK(check_weighted([](const V& v) { return selective_scan(v[0], v[1], v[2], v[3], v[4], v[5]); },
                       {random_tensor<double>({H, W, D}, rng), random_tensor<double>({H, W, D}, rng, 0.05, 0.8),
                        random_tensor<double>({D, N}, rng), random_tensor<double>({H, W, N}, rng),
                        random_tensor<double>({H, W, N}, rng), random_tensor<double>({D}, rng)},
                       17) < 1e-6);
}

TEST_CASE("backward accumulates over reused nodes") {
  Tape<double> tape;
  auto a = tape.leaf(TensorD({2}, {1.0, 2.0}));
  auto y = sum(mul(a, a));  // d/da = 2a
  tape.backward(y);
  CHECK(a.grad().vec() == std::vector<double>{2.0, 4.0});
  auto c = tape.constant(TensorD({2}, 1.0));
  auto z = sum(add(a, c));
  tape.zero_grad();
  tape.backward(z);
  CHECK(a.grad().vec() == std::vector<double>{1.0, 1.0});
  CHECK(c.grad().vec() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("grad_check flags a wrong gradient") {
  // A node whose backward deliberately returns half the true gradient.
  Fn f = [](Tape<double>& tape, const std::vector<Var<double>>& v) {
    TensorD val = v[0].value();
    for (auto& e : val.vec()) e = e * e;
    const std::size_t in = v[0].id();
    auto sq = tape.record(val, {in}, [in](Tape<double>& t, std::size_t self) {
      const auto& g = t.grad(self);
      auto& gi = t.grad_accum(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * t.value(in)[i];
    });
    return sum(sq);
  };
  CHECK(grad_check(f, {TensorD({3}, {1.0, -2.0, 0.5})}) > 0.4);
}

TEST_CASE("grad_check rejects non-finite values") {
  Fn f = [](Tape<double>&, const std::vector<Var<double>>& v) { return sum(exp(v[0])); };
  CHECK_THROWS_AS(grad_check(f, {TensorD({1}, {1e6})}), NumericError);
}
