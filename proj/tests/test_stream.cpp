#include <doctest.h>

#include <sstream>

#include "dpsr/stream.hpp"
#include "dpsr/train.hpp"
#include "test_util.hpp"

using namespace dpsr;

namespace {

HsiCube lr_cube(std::uint32_t h, std::uint32_t w, std::uint32_t c, std::uint64_t seed) {
  SynthOptions o;
  o.seed = seed;
  o.height = h;
  o.width = w;
  o.bands = c;
  return make_synthetic(o);
}

}  // namespace

TEST_CASE("state accounting matches the hand formula") {
  DpsrConfig cfg;
  cfg.bands = 202;
  cfg.features = 128;
  cfg.expansion = 1;
  cfg.state_size = 16;
  cfg.conv_kernel = 4;
  const auto acc = account_state_bytes(cfg, 1000);
  REQUIRE(acc.items.size() == 5);
  CHECK(acc.items[0].name == "clff0.mem.conv_window");
  CHECK(acc.items[0].bytes == 4ull * 4 * 1000 * 128);
  CHECK(acc.items[1].bytes == 4ull * 1000 * 128 * 16);
  CHECK(acc.items[0].bytes + acc.items[1].bytes == 10240000ull);
  CHECK(acc.items[4].name == "prev_line");
  CHECK(acc.items[4].bytes == 4ull * 1000 * 202);
  CHECK(acc.total() == 2 * 10240000ull + 808000ull);

  cfg.memory_kind = MemoryKind::causalconv;
  const auto cc = account_state_bytes(cfg, 1000);
  CHECK(cc.items.size() == 3);
  CHECK(cc.total() == 2 * 2048000ull + 808000ull);
}

TEST_CASE("streamed output equals the whole-image path and state stays flat") {
  const auto cfg = testing::tiny_config(3, 8, 2, 4, 2);
  const auto p = init_params(cfg, 1);
  for (std::uint32_t H : {2u, 5u, 12u}) {
    const auto lr = lr_cube(H, 6, 3, H);
    const auto res = run_stream(lr, p);
    CHECK(res.sr.height == (H - 1) * 2);
    CHECK(res.sr.width == 12);
    CHECK(max_rel_diff(res.sr.to_tensor(), super_resolve(p, lr).to_tensor()) <= 1e-5);
    const auto& rep = res.report;
    CHECK(rep.lines_processed == H);
    CHECK(rep.hr_lines_emitted == (H - 1) * 2);
    CHECK(rep.latency_ms.size() == H);
    CHECK(rep.state_bytes == account_state_bytes(cfg, 6).total());
    for (auto b : rep.state_bytes_per_line) CHECK(b == rep.state_bytes);
    CHECK(rep.max_ms >= rep.mean_ms);
    CHECK(rep.p95_ms <= rep.max_ms);
  }
}

TEST_CASE("deadline misses") {
  const std::vector<double> lat{100.0, 1.0, 5.0, 4.32, 4.33, 9.0};
  // The priming line never counts and the comparison is strict.
  CHECK(count_deadline_misses(lat, 4.32) == 3);
  CHECK(count_deadline_misses(lat, 9.0) == 0);
  CHECK(count_deadline_misses(lat, 0.5) == 5);
  std::size_t last = lat.size();
  for (double b = 0.0; b < 12.0; b += 0.25) {
    const auto m = count_deadline_misses(lat, b);
    CHECK(m <= last);
    last = m;
  }
  CHECK(count_deadline_misses({}, 1.0) == 0);
}

TEST_CASE("fixed cadence and reporting") {
  const auto cfg = testing::tiny_config(2, 8, 2, 2, 2);
  const auto p = init_params(cfg, 2);
  const auto lr = lr_cube(6, 4, 2, 3);
  StreamOptions opt;
  opt.budget_ms = 1e-6;
  opt.fixed_cadence = true;
  const auto res = run_stream(lr, p, opt);
  // An impossible budget misses every output line and lag accumulates.
  CHECK(res.report.deadline_misses == 5);
  CHECK(res.report.max_lag_ms > 0.0);
  const auto text = format_stream_report(res.report);
  CHECK(text.find("deadline") != std::string::npos);
  const auto csv = stream_csv(res.report);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "line_index,latency_ms,state_bytes");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 6);
}

TEST_CASE("stream input checks") {
  const auto cfg = testing::tiny_config(2, 8, 2, 2, 2);
  const auto p = init_params(cfg, 2);
  CHECK_THROWS_AS(run_stream(lr_cube(1, 4, 2, 1), p), ContractError);
  CHECK_THROWS_AS(run_stream(lr_cube(4, 4, 3, 1), p), ContractError);
  StreamOptions bad;
  bad.budget_ms = 0.0;
  CHECK_THROWS_AS(run_stream(lr_cube(4, 4, 2, 1), p, bad), ContractError);
}
