#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dpsr/dataio.hpp"
#include "dpsr/model.hpp"

namespace dpsr {

// PRISMA line acquisition period. Some sources quote 4.34 ms; either can be
// passed explicitly.
inline constexpr double kPrismaLineMs = 4.32;

struct StateItem {
  std::string name;
  std::uint64_t bytes = 0;
};

struct StateAccount {
  std::vector<StateItem> items;
  std::uint64_t total() const;
};

// Exact byte count of everything a stream keeps between lines (32-bit
// scalars): per memory block the K-line conv window and the SSM latent
// state, plus the previous LR line for the bilinear base.
StateAccount account_state_bytes(const DpsrConfig& config, std::uint64_t width);

struct StreamOptions {
  double budget_ms = kPrismaLineMs;
  // Fixed-cadence mode: line y is "acquired" at y * budget_ms on a virtual
  // clock and processing may not start before that instant.
  bool fixed_cadence = false;
};

struct StreamReport {
  std::vector<double> latency_ms;  // per dpsr_step call; index 0 is the priming line
  double first_line_ms = 0.0;
  // Statistics over lines 1..H-1 (the ones that emit output).
  double mean_ms = 0.0, p95_ms = 0.0, max_ms = 0.0;
  double budget_ms = kPrismaLineMs;
  std::size_t deadline_misses = 0;
  std::uint64_t state_bytes = 0;
  // Accounted state after each line; constant by construction.
  std::vector<std::uint64_t> state_bytes_per_line;
  std::size_t lines_processed = 0;
  std::size_t hr_lines_emitted = 0;
  // Virtual completion lag behind acquisition in fixed-cadence mode.
  double max_lag_ms = 0.0;
};

struct StreamResult {
  HsiCube sr;
  StreamReport report;
};

// Pulls LR lines one at a time through dpsr_step and assembles the
// (H-1)*r x rW x C output.
StreamResult run_stream(const HsiCube& lr, const DpsrParams& params, const StreamOptions& opt = {});

// Lines (excluding the priming line) whose latency exceeds the budget.
std::size_t count_deadline_misses(const std::vector<double>& latency_ms, double budget_ms);

std::string format_stream_report(const StreamReport& rep);
// Columns line_index, latency_ms, state_bytes.
std::string stream_csv(const StreamReport& rep);

}  // namespace dpsr
