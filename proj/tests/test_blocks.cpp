#include <doctest.h>

#include <cmath>

#include "dpsr/blocks.hpp"
#include "test_util.hpp"

using namespace dpsr;
using dpsr::testing::random_tensor;

namespace {

double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Finite-difference check of a block w.r.t. its input and every parameter.
template <template <typename> class P, typename Visit, typename Fwd>
double block_grad_check(const P<TensorD>& params, const TensorD& input, Visit visit, Fwd fwd, std::uint64_t seed) {
  std::vector<TensorD> flat{input};
  P<TensorD> copy = params;
  visit(copy, [&](const std::string&, TensorD& t) { flat.push_back(t); });
  std::mt19937_64 rng(seed);
  std::optional<TensorD> wts;
  GradCheckFn f = [&](Tape<double>& tape, const std::vector<Var<double>>& v) {
    P<Var<double>> q;
    std::size_t i = 1;
    visit(q, [&](const std::string&, Var<double>& slot) { slot = v[i++]; });
    Var<double> out = fwd(v[0], q);
    if (!wts) wts = random_tensor<double>(out.shape(), rng);
    return sum(mul(out, tape.constant(*wts)));
  };
  return grad_check(f, flat);
}

}  // namespace

TEST_CASE("channel attention on a hand-sized example") {
  // F = 2, hidden 1: mlp(v) = w2 * relu(w1 . v + b1) + b2.
  SfeParamsT<TensorD> p;
  p.att_w1 = TensorD({1, 2}, {1.0, -1.0});
  p.att_b1 = TensorD({1}, {0.0});
  p.att_w2 = TensorD({2, 1}, {0.5, 2.0});
  p.att_b2 = TensorD({2}, {0.0, -1.0});
  TensorD x({3, 2}, {1, 0, 3, 1, 2, 2});
  // avg = (2, 1), max = (3, 2); relu(1) = 1, relu(1) = 1.
  const double s0 = sigm(0.5 + 0.5), s1 = sigm(1.0 + 1.0);
  auto y = channel_attention(x, p);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(y.at({i, 0}) == doctest::Approx(x.at({i, 0}) * s0));
    CHECK(y.at({i, 1}) == doctest::Approx(x.at({i, 1}) * s1));
  }
}

TEST_CASE("NAF block is the identity when its output projections vanish") {
  const auto cfg = testing::tiny_config(3, 8, 2, 2, 2);
  auto p = testing::lively_params(cfg, 1).clff[0].naf;
  p.pw2_w.fill(0);
  p.pw2_b.fill(0);
  p.pw4_w.fill(0);
  p.pw4_b.fill(0);
  std::mt19937_64 rng(1);
  auto z = random_tensor<double>({2, 5, 8}, rng);
  CHECK(naf_forward(z, p) == z);
}

TEST_CASE("NAF output matches a scalar re-derivation") {
  const auto cfg = testing::tiny_config(3, 4, 2, 2, 2);
  const auto p = testing::lively_params(cfg, 2).clff[0].naf;
  std::mt19937_64 rng(2);
  const std::size_t W = 3, F = 4;
  auto z = random_tensor<double>({W, F}, rng);
  auto ln = [](const std::vector<double>& v, const TensorD& g, const TensorD& b) {
    double m = 0, var = 0;
    for (double e : v) m += e;
    m /= v.size();
    for (double e : v) var += (e - m) * (e - m);
    var /= v.size();
    std::vector<double> o(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) o[i] = (v[i] - m) / std::sqrt(var + kLayerNormEps) * g[i] + b[i];
    return o;
  };
  auto lin = [](const std::vector<double>& v, const TensorD& w, const TensorD& b) {
    std::vector<double> o(w.dim(0));
    for (std::size_t i = 0; i < o.size(); ++i) {
      o[i] = b[i];
      for (std::size_t j = 0; j < v.size(); ++j) o[i] += w.at({i, j}) * v[j];
    }
    return o;
  };
  std::vector<std::vector<double>> t1(W), gated(W), y(W);
  for (std::size_t x = 0; x < W; ++x) {
    std::vector<double> row(z.vec().begin() + x * F, z.vec().begin() + (x + 1) * F);
    t1[x] = lin(ln(row, p.ln1_gamma, p.ln1_beta), p.pw1_w, p.pw1_b);
  }
  for (std::size_t x = 0; x < W; ++x) {
    std::vector<double> d(2 * F);
    for (std::size_t c = 0; c < 2 * F; ++c) {
      d[c] = p.dw_b[c];
      for (int k = 0; k < 3; ++k) {
        const int j = static_cast<int>(x) + k - 1;
        if (j >= 0 && j < static_cast<int>(W)) d[c] += p.dw_w.at({c, std::size_t(k)}) * t1[j][c];
      }
    }
    gated[x].resize(F);
    for (std::size_t c = 0; c < F; ++c) gated[x][c] = d[c] * d[c + F];
  }
  std::vector<double> pool(F, 0.0);
  for (std::size_t x = 0; x < W; ++x)
    for (std::size_t c = 0; c < F; ++c) pool[c] += gated[x][c] / W;
  const auto att = lin(pool, p.sca_w, p.sca_b);
  auto out = naf_forward(z, p);
  for (std::size_t x = 0; x < W; ++x) {
    std::vector<double> s(F);
    for (std::size_t c = 0; c < F; ++c) s[c] = gated[x][c] * att[c];
    const auto proj = lin(s, p.pw2_w, p.pw2_b);
    y[x].resize(F);
    for (std::size_t c = 0; c < F; ++c) y[x][c] = z.at({x, c}) + proj[c];
    const auto u = lin(ln(y[x], p.ln2_gamma, p.ln2_beta), p.pw3_w, p.pw3_b);
    std::vector<double> g(F);
    for (std::size_t c = 0; c < F; ++c) g[c] = u[c] * u[c + F];
    const auto v = lin(g, p.pw4_w, p.pw4_b);
    for (std::size_t c = 0; c < F; ++c) CHECK(out.at({x, c}) == doctest::Approx(y[x][c] + v[c]).epsilon(1e-12));
  }
}

TEST_CASE("upsampler shapes") {
  const auto cfg = testing::tiny_config(3, 8, 2, 2, 3);
  const auto p = testing::lively_params(cfg, 3).up;
  std::mt19937_64 rng(3);
  auto out = upsample_line(random_tensor<double>({2, 5, 8}, rng), p, 3);
  CHECK(out.shape() == Shape{2, 3, 15, 3});
}

TEST_CASE("two-line bilinear examples") {
  // W = 2, C = 1, r = 2.
  TensorD prev({2, 1}, {0.0, 4.0}), curr({2, 1}, {8.0, 12.0});
  auto out = bilinear_two_line(prev, curr, 2);
  REQUIRE(out.shape() == Shape{2, 4, 1});
  // Line 0 is prev; line 1 is halfway. Columns: j, j+1/2, ..., last clamps.
  CHECK(out.vec() == std::vector<double>{0, 2, 4, 4, 4, 6, 8, 8});
  // Constant input stays constant.
  TensorD k({3, 2}, 0.25);
  const auto flat = bilinear_two_line(k, k, 4);
  for (double v : flat.vec()) CHECK(v == 0.25);
  CHECK_THROWS_AS(bilinear_two_line(prev, TensorD({3, 1}), 2), ShapeError);
}

TEST_CASE("blocks pass finite-difference checks") {
  const auto cfg = testing::tiny_config(3, 8, 2, 2, 2);
  const auto p = testing::lively_params(cfg, 4);
  std::mt19937_64 rng(4);
  auto sfe_visit = [](auto& q, auto fn) { visit_params(q, "", fn); };
  CHECK(block_grad_check<SfeParamsT>(p.sfe, random_tensor<double>({2, 4, 3}, rng), sfe_visit,
                                     [](const Var<double>& x, const SfeParamsT<Var<double>>& q) { return sfe_forward(x, q); },
                                     1) < 1e-4);
  CHECK(block_grad_check<NafParamsT>(p.clff[0].naf, random_tensor<double>({2, 4, 8}, rng), sfe_visit,
                                     [](const Var<double>& x, const NafParamsT<Var<double>>& q) { return naf_forward(x, q); },
                                     2) < 1e-4);
  CHECK(block_grad_check<UpsamplerParamsT>(
            p.up, random_tensor<double>({2, 4, 8}, rng), sfe_visit,
            [](const Var<double>& x, const UpsamplerParamsT<Var<double>>& q) { return upsample_line(x, q, 2); }, 3) <
        1e-4);
}
