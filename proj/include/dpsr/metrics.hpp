#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpsr/dataio.hpp"

namespace dpsr {

inline constexpr double kPsnrCapDb = 100.0;
inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

struct EvalReport {
  double mpsnr_db = 0.0;
  double mssim = 0.0;
  double sam_deg = 0.0;
  double rmse = 0.0;
  // One entry per band; NaN for bands excluded by the mask.
  std::vector<double> band_psnr_db;
  std::vector<double> band_ssim;
  std::size_t bands_used = 0;
  std::size_t lines_discarded = 0;  // r leading prediction lines + r trailing reference lines
  std::size_t sam_pixels_skipped = 0;
};

// pred holds the (H-1)*r lines a streamed run emits; ref is the H*r-line
// ground truth. Row i of pred is compared with row i of ref, so the last r
// reference lines never enter the metrics. Bands invalid in either cube are
// excluded.
EvalReport evaluate(const HsiCube& pred, const HsiCube& ref, std::uint32_t r);

// Single-band SSIM of two images [rows x cols] (row-major doubles).
double ssim_2d(const std::vector<double>& a, const std::vector<double>& b, std::size_t rows, std::size_t cols);

// Bicubic down then up, scored with the same alignment as evaluate().
EvalReport baseline_bicubic(const HsiCube& hr, std::uint32_t r);

std::string format_report(const EvalReport& rep);
std::string report_csv_header();
std::string report_csv_row(const EvalReport& rep, const std::string& dataset, const std::string& config,
                           std::uint32_t r);

}  // namespace dpsr
