#include "dpsr/stream.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dpsr {

std::uint64_t StateAccount::total() const {
  std::uint64_t t = 0;
  for (const auto& it : items) t += it.bytes;
  return t;
}

StateAccount account_state_bytes(const DpsrConfig& config, std::uint64_t width) {
  constexpr std::uint64_t kScalar = sizeof(float);
  const std::uint64_t ef = config.expanded();
  StateAccount acc;
  for (std::uint32_t i = 0; i < config.n_clff; ++i) {
    const std::string prefix = "clff" + std::to_string(i) + ".mem.";
    acc.items.push_back({prefix + "conv_window", kScalar * config.conv_kernel * width * ef});
    if (config.memory_kind == MemoryKind::mamba) {
      acc.items.push_back({prefix + "ssm_state", kScalar * width * ef * config.state_size});
    }
  }
  acc.items.push_back({"prev_line", kScalar * width * config.bands});
  return acc;
}

std::size_t count_deadline_misses(const std::vector<double>& latency_ms, double budget_ms) {
  std::size_t misses = 0;
  for (std::size_t i = 1; i < latency_ms.size(); ++i) misses += latency_ms[i] > budget_ms ? 1 : 0;
  return misses;
}

StreamResult run_stream(const HsiCube& lr, const DpsrParams& params, const StreamOptions& opt) {
  if (!(opt.budget_ms > 0.0)) throw ContractError("run_stream: budget_ms must be positive");
  if (lr.bands != params.config.bands) {
    throw ContractError("run_stream: cube has " + std::to_string(lr.bands) + " bands, model expects " +
                        std::to_string(params.config.bands));
  }
  if (lr.height < 2) throw ContractError("run_stream: need at least 2 LR lines");
  const std::uint32_t r = params.config.scale;
  const std::uint32_t W = lr.width, C = lr.bands;

  StreamResult res;
  res.sr = HsiCube((lr.height - 1) * r, W * r, C);
  res.sr.band_valid = lr.band_valid;
  StreamReport& rep = res.report;
  rep.budget_ms = opt.budget_ms;
  rep.state_bytes = account_state_bytes(params.config, W).total();

  using Clock = std::chrono::steady_clock;
  StreamState<float> state;
  double done_at = 0.0;  // virtual clock, fixed-cadence mode
  for (std::uint32_t y = 0; y < lr.height; ++y) {
    const TensorF line = lr.line(y);  // the sensor delivers one line at a time
    const auto t0 = Clock::now();
    const auto out = dpsr_step(line, params, state);
    const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    rep.latency_ms.push_back(ms);
    rep.state_bytes_per_line.push_back(sizeof(float) * state.element_count());
    if (opt.fixed_cadence) {
      const double acquired = y * opt.budget_ms;
      done_at = std::max(done_at, acquired) + ms;
      rep.max_lag_ms = std::max(rep.max_lag_ms, done_at - acquired);
    }
    if (out) {
      const TensorF& hr = *out;  // [r, rW, C]
      for (std::uint32_t k = 0; k < r; ++k) {
        const std::size_t row = std::size_t{y - 1} * r + k;
        for (std::size_t x = 0; x < std::size_t{W} * r; ++x)
          for (std::size_t c = 0; c < C; ++c) res.sr.at(row, x, c) = hr[(k * W * r + x) * C + c];
      }
      rep.hr_lines_emitted += r;
    }
  }
  rep.lines_processed = lr.height;
  rep.first_line_ms = rep.latency_ms.front();
  std::vector<double> steady(rep.latency_ms.begin() + 1, rep.latency_ms.end());
  rep.mean_ms = std::accumulate(steady.begin(), steady.end(), 0.0) / static_cast<double>(steady.size());
  std::sort(steady.begin(), steady.end());
  rep.max_ms = steady.back();
  const auto idx = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(steady.size()))) - 1;
  rep.p95_ms = steady[std::min(idx, steady.size() - 1)];
  rep.deadline_misses = count_deadline_misses(rep.latency_ms, opt.budget_ms);
  return res;
}

std::string format_stream_report(const StreamReport& rep) {
  std::ostringstream os;
  os.precision(4);
  os << std::fixed;
  os << "lines processed   " << rep.lines_processed << " (" << rep.hr_lines_emitted << " HR lines emitted)\n"
     << "first line        " << rep.first_line_ms << " ms (priming, excluded below)\n"
     << "mean latency      " << rep.mean_ms << " ms\n"
     << "p95 latency       " << rep.p95_ms << " ms\n"
     << "max latency       " << rep.max_ms << " ms\n"
     << "budget            " << rep.budget_ms << " ms\n"
     << "deadline misses   " << rep.deadline_misses << " / " << (rep.lines_processed ? rep.lines_processed - 1 : 0)
     << "\n"
     << "state memory      " << rep.state_bytes << " bytes\n";
  if (rep.max_lag_ms > 0.0) os << "max lag           " << rep.max_lag_ms << " ms\n";
  return os.str();
}

std::string stream_csv(const StreamReport& rep) {
  std::ostringstream os;
  os.precision(9);
  os << "line_index,latency_ms,state_bytes\n";
  for (std::size_t i = 0; i < rep.latency_ms.size(); ++i) {
    os << i << ',' << rep.latency_ms[i] << ',' << rep.state_bytes_per_line[i] << '\n';
  }
  return os.str();
}

}  // namespace dpsr
