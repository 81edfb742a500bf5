#include <doctest.h>

#include <cmath>

#include "dpsr/train.hpp"
#include "test_util.hpp"

using namespace dpsr;
using dpsr::testing::random_tensor;

namespace {

std::vector<HsiCube> synth_set(std::size_t n, std::uint64_t seed0, std::uint32_t side, std::uint32_t bands) {
  std::vector<HsiCube> out;
  for (std::size_t i = 0; i < n; ++i) {
    SynthOptions o;
    o.seed = seed0 + i;
    o.height = o.width = side;
    o.bands = bands;
    o.smoothness = 2.0;
    out.push_back(make_synthetic(o));
  }
  return out;
}

}  // namespace

TEST_CASE("composite loss on a hand-computed example") {
  // [L=2, X=2, C=2].
  TensorD pred({2, 2, 2}, {1, 0, 0, 1, 1, 1, 2, 0});
  TensorD tgt({2, 2, 2}, {1, 0, 1, 1, 1, 1, 0, 0});
  const auto lp = composite_loss(pred, tgt, 0.3, 0.1);
  // L1: |0|+|0|+|-1|+|0|+0+0+|2|+0 = 3 over 8.
  CHECK(lp.l1 == doctest::Approx(3.0 / 8));
  // Angles: (1,0)-(1,0)=0, (0,1)-(1,1)=pi/4, (1,1)-(1,1)=0, (2,0)-(0,0) skipped.
  CHECK(lp.sam == doctest::Approx(std::acos(std::sqrt(0.5)) / 3));
  // Forward differences. Along lines: pred d = (0,1,2,-1), tgt d = (0,1,-1,-1): |diff| = 0,0,3,0 -> mean 0.75.
  // Along columns: pred d = (-1,1,1,-1), tgt d = (0,1,-1,-1): |diff| = 1,0,2,0 -> mean 0.75.
  CHECK(lp.grad == doctest::Approx(0.5 * 0.75 + 0.5 * 0.75));
  CHECK(lp.total == doctest::Approx(lp.l1 + 0.3 * lp.sam + 0.1 * lp.grad));
  // Zero error, zero loss.
  CHECK(composite_loss(tgt, tgt, 0.3, 0.1).total == 0.0);
}

TEST_CASE("composite loss gradient") {
  std::mt19937_64 rng(1);
  const auto tgt = random_tensor<double>({3, 4, 3}, rng, 0.1, 1.0);
  const auto pred = random_tensor<double>({3, 4, 3}, rng, 0.1, 1.0);
  GradCheckFn f = [&](Tape<double>&, const std::vector<Var<double>>& v) { return composite_loss(v[0], tgt, 0.3, 0.1); };
  CHECK(grad_check(f, {pred}, 1e-6) < 1e-4);
  Tape<double> tape;
  LossParts parts;
  auto l = composite_loss(tape.leaf(pred), tgt, 0.3, 0.1, &parts);
  CHECK(l.value().item() == doctest::Approx(composite_loss(pred, tgt, 0.3, 0.1).total));
  CHECK(parts.l1 > 0.0);
}

TEST_CASE("adam first steps") {
  TensorF w({3}, {1.0f, 2.0f, -1.0f});
  NamedParams ps{{"w", &w}};
  AdamState st;
  adam_step(ps, {TensorF({3}, {0.5f, -2.0f, 0.0f})}, st, 0.01);
  // Bias correction makes the first step lr * g / |g| (0 where g = 0).
  CHECK(w[0] == doctest::Approx(0.99f).epsilon(1e-6));
  CHECK(w[1] == doctest::Approx(2.01f).epsilon(1e-6));
  CHECK(w[2] == -1.0f);
  adam_step(ps, {TensorF({3}, {1.0f, 0.0f, 0.0f})}, st, 0.01);
  // Second step on w[0]: m = 0.9*0.05 + 0.1 = 0.145, v = 0.999*0.00025 + 0.001.
  const double m = 0.145 / (1 - 0.81), v = (0.999 * 0.00025 + 0.001) / (1 - 0.998001);
  CHECK(w[0] == doctest::Approx(0.99 - 0.01 * m / (std::sqrt(v) + 1e-8)).epsilon(1e-6));
  CHECK(st.step == 2);
}

TEST_CASE("adam rejects bad gradients") {
  TensorF w({2});
  NamedParams ps{{"layer.w", &w}};
  AdamState st;
  CHECK_THROWS_WITH_AS(adam_step(ps, {TensorF({2}, {1.0f, NAN})}, st, 0.1), doctest::Contains("layer.w"), NumericError);
  CHECK_THROWS_AS(adam_step(ps, {TensorF({3})}, st, 0.1), ShapeError);
  CHECK_THROWS_AS(adam_step(ps, {}, st, 0.1), ContractError);
  CHECK(st.step == 0);
}

TEST_CASE("train config validation") {
  TrainConfig t;
  CHECK_NOTHROW(t.validate());
  t.batch = 0;
  CHECK_THROWS_AS(t.validate(), ContractError);
  t = {};
  t.lr = -1;
  CHECK_THROWS_AS(t.validate(), ContractError);
  t.lr = 0;
  CHECK_THROWS_AS(t.validate(), ContractError);
}

TEST_CASE("one fit step moves every weight by at most the learning rate") {
  const auto train = synth_set(4, 10, 8, 3), val = synth_set(2, 90, 8, 3);
  const auto cfg = testing::tiny_config(3, 8, 2, 2, 2);
  TrainConfig t;
  t.lr = 1e-3;
  t.batch = 2;
  t.patch = 8;
  t.max_steps = 1;
  t.eval_every = 1;
  const auto res = fit(train, val, cfg, t);
  const auto init = init_params(cfg, t.seed);
  const auto a = param_list(res.params), b = param_list(init);
  double largest = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].second->size(); ++j)
      largest = std::max(largest, std::abs(double((*a[i].second)[j]) - (*b[i].second)[j]));
  // Bias-corrected Adam's first step is lr * g / (|g| + eps).
  CHECK(largest <= 1e-3 + 1e-7);  // plus float rounding of the update
  CHECK(largest >= 0.9e-3);
  CHECK(res.steps == 1);
  CHECK(res.best_step == 1);
}

TEST_CASE("fit is deterministic and logs every step") {
  const auto train = synth_set(6, 20, 8, 3), val = synth_set(2, 95, 8, 3);
  const auto cfg = testing::tiny_config(3, 8, 2, 2, 2);
  TrainConfig t;
  t.lr = 1e-3;
  t.batch = 2;
  t.patch = 8;
  t.max_steps = 6;
  t.eval_every = 3;
  t.seed = 4;
  std::size_t calls = 0;
  const auto a = fit(train, val, cfg, t, [&](const TrainLogRow&) { ++calls; });
  const auto b = fit(train, val, cfg, t);
  CHECK(calls == 6);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss.total == b.log[i].loss.total);
  CHECK(std::isnan(a.log[0].val_mpsnr));
  CHECK(std::isfinite(a.log[2].val_mpsnr));
  CHECK(a.best_val_mpsnr == b.best_val_mpsnr);
  const auto pa = param_list(a.params), pb = param_list(b.params);
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i].second == *pb[i].second);
  t.seed = 5;
  const auto c = fit(train, val, cfg, t);
  CHECK(c.log[0].loss.total != a.log[0].loss.total);
}

TEST_CASE("fit rejects unusable data") {
  const auto cfg = testing::tiny_config(3, 8, 2, 2, 2);
  TrainConfig t;
  t.patch = 16;
  t.max_steps = 1;
  const auto small = synth_set(2, 1, 8, 3);
  CHECK_THROWS_AS(fit(small, small, cfg, t), ContractError);
  t.patch = 8;
  CHECK_THROWS_AS(fit({}, small, cfg, t), ContractError);
  CHECK_THROWS_AS(fit(synth_set(2, 1, 8, 4), small, cfg, t), ContractError);
}

TEST_CASE("divergence raises a numeric error") {
  const auto train = synth_set(2, 30, 8, 3);
  const auto cfg = testing::tiny_config(3, 8, 2, 2, 2);
  auto p = init_params(cfg, 0);
  p.up.restore_b.fill(std::numeric_limits<float>::infinity());
  TrainConfig t;
  t.patch = 8;
  t.batch = 1;
  t.max_steps = 2;
  CHECK_THROWS_AS(fit_from(p, train, train, t), NumericError);
}

TEST_CASE("training log csv") {
  CHECK(train_log_csv_header() == "step,epoch,loss,l1,sam,grad,val_mpsnr");
  TrainLogRow row;
  row.step = 3;
  row.loss.total = 0.5;
  const auto s = train_log_csv_row(row);
  CHECK(s.rfind("3,0,0.5,", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), ',') == 6);
}
