#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpsr/model.hpp"
#include "dpsr/stream.hpp"

namespace dpsr {

struct CostItem {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t macs_per_line = 0;  // per LR line of width W
};

struct CostReport {
  DpsrConfig config;
  std::uint64_t width = 0;
  std::vector<CostItem> items;
  std::uint64_t param_count = 0;
  std::uint64_t flops_per_line = 0;  // 2 FLOPs per multiply-accumulate
  double flops_per_input_pixel = 0.0;   // per LR spatial pixel (line / W)
  double flops_per_input_sample = 0.0;  // per LR sample (line / (W * C))
  StateAccount state;
};

// Symbolic walk of the architecture. Counts multiply-accumulates of every
// convolution, projection and SSM recurrence; normalizations and pointwise
// activations are not counted.
CostReport profile(const DpsrConfig& config, std::uint64_t width, std::uint32_t bands);

std::string format_cost_report(const CostReport& rep);
// Side-by-side with the published complexity figures (2.71 M parameters,
// 31 K FLOPs/px).
std::string table1_comparison(const CostReport& rep);
std::string cost_csv_header();
std::string cost_csv_row(const CostReport& rep);

}  // namespace dpsr
