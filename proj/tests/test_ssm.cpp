#include <doctest.h>

#include "dpsr/ssm.hpp"
#include "test_util.hpp"

using namespace dpsr;
using dpsr::testing::random_tensor;

namespace {

template <typename T>
Tensor<T> fold_steps(const Tensor<T>& seq, const MambaParamsT<Tensor<T>>& p, MemoryKind kind, std::size_t k,
                     std::size_t n) {
  const std::size_t H = seq.dim(0), W = seq.dim(1), F = seq.dim(2), EF = p.in_x_w.dim(0);
  auto s = MambaState<T>::zeros(k, W, EF, n, kind);
  Tensor<T> out(seq.shape());
  for (std::size_t t = 0; t < H; ++t) {
    auto y = memory_step(slice_rows(seq, t, t + 1).reshaped({W, F}), p, s, kind);
    std::copy(y.vec().begin(), y.vec().end(), out.vec().begin() + t * W * F);
  }
  return out;
}

}  // namespace

TEST_CASE("memory kind names") {
  CHECK(to_string(MemoryKind::mamba) == "mamba");
  CHECK(memory_kind_from_string("causalconv") == MemoryKind::causalconv);
  CHECK_THROWS_AS(memory_kind_from_string("lstm"), ContractError);
}

TEST_CASE("state sizes") {
  auto s = MambaState<float>::zeros(4, 10, 6, 3);
  CHECK(s.conv_buffer.shape() == Shape{4, 10, 6});
  CHECK(s.h.shape() == Shape{10, 6, 3});
  CHECK(s.element_count() == 4 * 10 * 6 + 10 * 6 * 3);
  auto c = MambaState<float>::zeros(4, 10, 6, 3, MemoryKind::causalconv);
  CHECK(c.h.empty());
  CHECK_THROWS_AS(MambaState<float>::zeros(0, 10, 6, 3), ContractError);
}

TEST_CASE("stepping equals scanning for both memory kinds") {
  for (auto kind : {MemoryKind::mamba, MemoryKind::causalconv}) {
    for (std::size_t k : {1u, 2u, 4u}) {
      const auto cfg = testing::tiny_config(3, 6, 3, static_cast<std::uint32_t>(k), 2, kind);
      const auto p = testing::lively_params(cfg, 10 + k).clff[1].memory;
      std::mt19937_64 rng(k);
      auto seq = random_tensor<double>({7, 3, 6}, rng);
      auto a = fold_steps(seq, p, kind, k, 3);
      auto b = memory_scan(seq, p, kind);
      CHECK(max_rel_diff(a, b) < 1e-12);
      // Single precision too.
      auto pf = cast_params<float>(testing::lively_params(cfg, 10 + k)).clff[1].memory;
      auto seqf = seq.cast<float>();
      CHECK(max_rel_diff(fold_steps(seqf, pf, kind, k, 3), memory_scan(seqf, pf, kind)) < 1e-5);
    }
  }
}

TEST_CASE("causal conv variant forgets lines outside its window") {
  const std::size_t K = 3, H = 8;
  const auto cfg = testing::tiny_config(2, 4, 2, K, 2, MemoryKind::causalconv);
  const auto p = testing::lively_params(cfg, 5).clff[0].memory;
  std::mt19937_64 rng(5);
  auto seq = random_tensor<double>({H, 2, 4}, rng);
  const auto base = causalconv_scan(seq, p);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t t = 0; t < H; ++t) {
      auto pert = seq;
      for (std::size_t i = 0; i < 8; ++i) pert[t * 8 + i] += 3.0;
      const auto out = causalconv_scan(pert, p);
      const bool same = std::equal(out.vec().begin() + y * 8, out.vec().begin() + (y + 1) * 8, base.vec().begin() + y * 8);
      // Line y depends on exactly lines y-K+1 .. y.
      const bool in_window = t <= y && t + K > y;
      CHECK(same == !in_window);
    }
  }
}

TEST_CASE("mamba memory reaches arbitrarily far back") {
  const auto cfg = testing::tiny_config(2, 4, 2, 2, 2);
  const auto p = testing::lively_params(cfg, 6).clff[0].memory;
  std::mt19937_64 rng(6);
  auto seq = random_tensor<double>({10, 2, 4}, rng);
  auto pert = seq;
  pert[0] += 1.0;
  const auto a = mamba_scan(seq, p), b = mamba_scan(pert, p);
  CHECK(slice_rows(a, 9, 10) != slice_rows(b, 9, 10));
}

TEST_CASE("step contract violations") {
  const auto cfg = testing::tiny_config(2, 4, 2, 2, 2);
  const auto p = testing::lively_params(cfg, 7).clff[0].memory;
  MambaState<double> fresh;
  CHECK_THROWS_AS(mamba_step(TensorD({3, 4}), p, fresh), ContractError);
  auto s = MambaState<double>::zeros(2, 3, 4, 2);
  CHECK_THROWS_AS(mamba_step(TensorD({5, 4}), p, s), ContractError);
}

TEST_CASE("memory scans pass finite-difference checks") {
  for (auto kind : {MemoryKind::mamba, MemoryKind::causalconv}) {
    const auto cfg = testing::tiny_config(2, 4, 2, 2, 2, kind);
    auto p = testing::lively_params(cfg, 8).clff[0].memory;
    std::mt19937_64 rng(8);
    std::vector<TensorD> flat{random_tensor<double>({4, 2, 4}, rng)};
    visit_params(p, kind, "", [&](const std::string&, TensorD& t) { flat.push_back(t); });
    const auto wts = random_tensor<double>({4, 2, 4}, rng);
    GradCheckFn f = [&](Tape<double>& tape, const std::vector<Var<double>>& v) {
      MambaParamsT<Var<double>> q;
      std::size_t i = 1;
      visit_params(q, kind, "", [&](const std::string&, Var<double>& slot) { slot = v[i++]; });
      return sum(mul(memory_scan(v[0], q, kind), tape.constant(wts)));
    };
    CHECK(grad_check(f, flat) < 1e-4);
  }
}
