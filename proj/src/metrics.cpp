#include "dpsr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "dpsr/parallel.hpp"

namespace dpsr {

namespace {

std::vector<double> gaussian_window(std::size_t n) {
  std::vector<double> w(n);
  const double mid = (static_cast<double>(n) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - mid;
    w[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    total += w[i];
  }
  for (auto& v : w) v /= total;
  return w;
}

// Valid-mode separable filtering.
std::vector<double> filter2(const std::vector<double>& img, std::size_t rows, std::size_t cols,
                            const std::vector<double>& w) {
  const std::size_t n = w.size(), orow = rows - n + 1, ocol = cols - n + 1;
  std::vector<double> tmp(rows * ocol), out(orow * ocol);
  for (std::size_t y = 0; y < rows; ++y)
    for (std::size_t x = 0; x < ocol; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += w[k] * img[y * cols + x + k];
      tmp[y * ocol + x] = acc;
    }
  for (std::size_t y = 0; y < orow; ++y)
    for (std::size_t x = 0; x < ocol; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += w[k] * tmp[(y + k) * ocol + x];
      out[y * ocol + x] = acc;
    }
  return out;
}

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

}  // namespace

double ssim_2d(const std::vector<double>& a, const std::vector<double>& b, std::size_t rows, std::size_t cols) {
  if (a.size() != rows * cols || b.size() != rows * cols) throw ContractError("ssim_2d: size mismatch");
  if (rows == 0 || cols == 0) throw ContractError("ssim_2d: empty image");
  std::size_t n = std::min({kSsimWindow, rows, cols});
  if (n % 2 == 0) --n;
  const auto w = gaussian_window(n);
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter2(a, rows, cols, w), mu_b = filter2(b, rows, cols, w);
  const auto e_aa = filter2(aa, rows, cols, w), e_bb = filter2(bb, rows, cols, w), e_ab = filter2(ab, rows, cols, w);
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = e_aa[i] - mu_a[i] * mu_a[i];
    const double vb = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    const double num = (2.0 * (mu_a[i] * mu_b[i]) + c1) * (2.0 * cov + c2);
    const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
    total += num / den;
  }
  return total / static_cast<double>(mu_a.size());
}

EvalReport evaluate(const HsiCube& pred, const HsiCube& ref, std::uint32_t r) {
  if (r == 0) throw ContractError("evaluate: factor must be positive");
  if (pred.width != ref.width || pred.bands != ref.bands) {
    throw ContractError("evaluate: prediction " + std::to_string(pred.width) + "x" + std::to_string(pred.bands) +
                        " (W x C) does not match reference " + std::to_string(ref.width) + "x" +
                        std::to_string(ref.bands));
  }
  if (std::size_t{pred.height} + r != ref.height) {
    throw ContractError("evaluate: prediction has " + std::to_string(pred.height) + " lines, expected reference lines - r = " +
                        std::to_string(static_cast<long long>(ref.height) - r));
  }
  if (pred.height == 0 || pred.width == 0) throw ContractError("evaluate: empty prediction");
  const std::size_t L = pred.height, W = pred.width, C = pred.bands;

  std::vector<std::uint8_t> valid(C);
  for (std::size_t c = 0; c < C; ++c) valid[c] = pred.band_valid[c] && ref.band_valid[c];

  EvalReport rep;
  rep.lines_discarded = 2 * std::size_t{r};
  rep.band_psnr_db.assign(C, std::numeric_limits<double>::quiet_NaN());
  rep.band_ssim.assign(C, std::numeric_limits<double>::quiet_NaN());
  std::vector<double> band_sse(C, 0.0);

  parallel_for(C, [&](std::size_t begin, std::size_t end) {
    std::vector<double> a(L * W), b(L * W);
    for (std::size_t c = begin; c < end; ++c) {
      if (!valid[c]) continue;
      double sse = 0.0;
      for (std::size_t y = 0; y < L; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const double p = pred.at(y, x, c), t = ref.at(y, x, c);
          a[y * W + x] = p;
          b[y * W + x] = t;
          sse += (p - t) * (p - t);
        }
      band_sse[c] = sse;
      rep.band_psnr_db[c] = psnr_from_mse(sse / static_cast<double>(L * W));
      rep.band_ssim[c] = ssim_2d(a, b, L, W);
    }
  }, 1);

  double psnr_sum = 0.0, ssim_sum = 0.0, sse_sum = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    if (!valid[c]) continue;
    ++rep.bands_used;
    psnr_sum += rep.band_psnr_db[c];
    ssim_sum += rep.band_ssim[c];
    sse_sum += band_sse[c];
  }
  if (rep.bands_used == 0) throw ContractError("evaluate: no valid bands");
  const double nb = static_cast<double>(rep.bands_used);
  rep.mpsnr_db = psnr_sum / nb;
  rep.mssim = ssim_sum / nb;
  rep.rmse = std::sqrt(sse_sum / (nb * static_cast<double>(L * W)));

  // Spectral angle from the chord between unit vectors: exactly zero for
  // collinear spectra and well conditioned near zero.
  double angle_sum = 0.0;
  std::size_t counted = 0;
  std::vector<double> p(C), t(C);
  for (std::size_t y = 0; y < L; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double np = 0.0, nt = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        p[c] = valid[c] ? pred.at(y, x, c) : 0.0;
        t[c] = valid[c] ? ref.at(y, x, c) : 0.0;
        np += p[c] * p[c];
        nt += t[c] * t[c];
      }
      if (np == 0.0 || nt == 0.0) {
        ++rep.sam_pixels_skipped;
        continue;
      }
      np = std::sqrt(np);
      nt = std::sqrt(nt);
      double chord = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double d = p[c] / np - t[c] / nt;
        chord += d * d;
      }
      angle_sum += 2.0 * std::asin(std::min(1.0, std::sqrt(chord) / 2.0));
      ++counted;
    }
  rep.sam_deg = counted ? angle_sum / static_cast<double>(counted) * 180.0 / std::numbers::pi : 0.0;
  return rep;
}

EvalReport baseline_bicubic(const HsiCube& hr, std::uint32_t r) {
  const HsiCube up = bicubic_upsample(bicubic_downsample(hr, r), r);
  return evaluate(up.lines(0, up.height - r), hr, r);
}

std::string format_report(const EvalReport& rep) {
  std::ostringstream os;
  os.precision(6);
  os << "MPSNR " << rep.mpsnr_db << " dB\n"
     << "MSSIM " << rep.mssim << "\n"
     << "SAM   " << rep.sam_deg << " deg\n"
     << "RMSE  " << rep.rmse << "\n"
     << "bands used " << rep.bands_used << ", lines discarded " << rep.lines_discarded
     << ", SAM pixels skipped " << rep.sam_pixels_skipped << "\n";
  return os.str();
}

std::string report_csv_header() { return "dataset,config,r,mpsnr_db,mssim,sam_deg,rmse,bands_used"; }

std::string report_csv_row(const EvalReport& rep, const std::string& dataset, const std::string& config,
                           std::uint32_t r) {
  std::ostringstream os;
  os.precision(10);
  os << dataset << ',' << config << ',' << r << ',' << rep.mpsnr_db << ',' << rep.mssim << ',' << rep.sam_deg << ','
     << rep.rmse << ',' << rep.bands_used;
  return os.str();
}

}  // namespace dpsr
