#include <doctest.h>

#include <cmath>
#include <random>

#include "dpsr/metrics.hpp"

using namespace dpsr;

namespace {

HsiCube random_cube(std::uint32_t h, std::uint32_t w, std::uint32_t c, std::uint64_t seed, float lo = 0.1f,
                    float hi = 0.8f) {
  HsiCube cube(h, w, c);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  for (auto& v : cube.data) v = u(rng);
  return cube;
}

HsiCube with_noise(const HsiCube& ref, double sigma, std::uint64_t seed) {
  HsiCube out = ref;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& v : out.data) v = static_cast<float>(v + n(rng));
  return out;
}

}  // namespace

TEST_CASE("identical cubes give the ideal scores") {
  const auto ref = random_cube(12, 9, 4, 1);
  const auto rep = evaluate(ref.lines(0, 10), ref, 2);
  CHECK(rep.mssim == 1.0);
  CHECK(rep.sam_deg == 0.0);
  CHECK(rep.rmse == 0.0);
  CHECK(rep.mpsnr_db == kPsnrCapDb);
  CHECK(rep.bands_used == 4);
  CHECK(rep.lines_discarded == 4);
}

TEST_CASE("uniform offset gives the analytic RMSE and PSNR") {
  // Values on a coarse binary grid keep ref + 0.1 close to exact in float.
  auto ref = random_cube(10, 8, 3, 2);
  for (auto& v : ref.data) v = std::round(v * 8) / 8;
  HsiCube pred = ref.lines(0, 8);
  for (auto& v : pred.data) v += 0.1f;
  const auto rep = evaluate(pred, ref, 2);
  CHECK(rep.rmse == doctest::Approx(0.1).epsilon(1e-6));
  for (double p : rep.band_psnr_db) CHECK(p == doctest::Approx(20.0).epsilon(1e-6));
  CHECK(rep.mpsnr_db == doctest::Approx(20.0).epsilon(1e-6));
}

TEST_CASE("spectral angle of known vectors") {
  HsiCube ref(2, 1, 2), pred(1, 1, 2);
  ref.at(0, 0, 0) = 1.0f;
  ref.at(0, 0, 1) = 1.0f;
  pred.at(0, 0, 0) = 1.0f;
  pred.at(0, 0, 1) = 0.0f;
  CHECK(evaluate(pred, ref, 1).sam_deg == doctest::Approx(45.0).epsilon(1e-12));
  // Positive rescaling of the prediction leaves the angle unchanged.
  pred.at(0, 0, 0) = 7.0f;
  CHECK(evaluate(pred, ref, 1).sam_deg == doctest::Approx(45.0).epsilon(1e-12));
  // Zero spectra are skipped rather than counted.
  pred.at(0, 0, 0) = 0.0f;
  const auto rep = evaluate(pred, ref, 1);
  CHECK(rep.sam_pixels_skipped == 1);
  CHECK(rep.sam_deg == 0.0);
}

TEST_CASE("SAM ignores per-pixel scaling") {
  const auto ref = random_cube(10, 6, 5, 3);
  HsiCube pred = ref.lines(0, 8);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 6; ++x)
      for (std::size_t c = 0; c < 5; ++c) pred.at(y, x, c) *= 1.0f + 0.25f * static_cast<float>(x);
  CHECK(evaluate(pred, ref, 2).sam_deg < 1e-4);
}

TEST_CASE("more noise scores worse") {
  const auto ref = random_cube(20, 16, 3, 4);
  double last_psnr = 1e9, last_ssim = 2.0, last_sam = -1.0;
  for (double sigma : {0.005, 0.02, 0.08}) {
    const auto rep = evaluate(with_noise(ref, sigma, 9).lines(0, 18), ref, 2);
    CHECK(rep.mpsnr_db < last_psnr);
    CHECK(rep.mssim < last_ssim);
    CHECK(rep.sam_deg > last_sam);
    last_psnr = rep.mpsnr_db;
    last_ssim = rep.mssim;
    last_sam = rep.sam_deg;
  }
}

TEST_CASE("scores are symmetric under a horizontal flip") {
  const auto ref = random_cube(14, 11, 3, 5);
  const auto pred = with_noise(ref, 0.03, 6).lines(0, 12);
  auto flip = [](const HsiCube& c) {
    HsiCube o = c;
    for (std::size_t y = 0; y < c.height; ++y)
      for (std::size_t x = 0; x < c.width; ++x)
        for (std::size_t b = 0; b < c.bands; ++b) o.at(y, x, b) = c.at(y, c.width - 1 - x, b);
    return o;
  };
  const auto a = evaluate(pred, ref, 2), b = evaluate(flip(pred), flip(ref), 2);
  CHECK(a.mpsnr_db == doctest::Approx(b.mpsnr_db).epsilon(1e-12));
  CHECK(a.mssim == doctest::Approx(b.mssim).epsilon(1e-12));
  CHECK(a.sam_deg == doctest::Approx(b.sam_deg).epsilon(1e-12));
}

TEST_CASE("SSIM of constant images") {
  const double k = 0.4, c = 0.1;
  std::vector<double> a(64, k), b(64, k + c);
  const double c1 = 1e-4;
  const double expected = (2 * k * (k + c) + c1) / (k * k + (k + c) * (k + c) + c1);
  CHECK(ssim_2d(a, b, 8, 8) == doctest::Approx(expected).epsilon(1e-12));
  // Small images shrink the window instead of failing.
  std::vector<double> s(3 * 20, 0.2);
  CHECK(ssim_2d(s, s, 3, 20) == 1.0);
  CHECK_THROWS_AS(ssim_2d(a, b, 4, 4), ContractError);
}

TEST_CASE("masked bands are excluded") {
  auto ref = random_cube(8, 8, 3, 7);
  HsiCube pred = ref.lines(0, 6);
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 8; ++x) pred.at(y, x, 1) = 0.0f;
  ref.band_valid[1] = 0;
  const auto rep = evaluate(pred, ref, 2);
  CHECK(rep.bands_used == 2);
  CHECK(std::isnan(rep.band_psnr_db[1]));
  CHECK(rep.mpsnr_db == kPsnrCapDb);
  CHECK(rep.sam_deg == 0.0);
}

TEST_CASE("extent mismatches are rejected") {
  const auto ref = random_cube(8, 8, 3, 8);
  CHECK_THROWS_AS(evaluate(ref.lines(0, 7), ref, 2), ContractError);
  CHECK_THROWS_AS(evaluate(random_cube(6, 7, 3, 1), ref, 2), ContractError);
  CHECK_THROWS_AS(evaluate(ref.lines(0, 8), ref, 0), ContractError);
}

TEST_CASE("bicubic baseline and report formatting") {
  SynthOptions o;
  o.height = o.width = 16;
  o.bands = 4;
  const auto hr = make_synthetic(o);
  const auto rep = baseline_bicubic(hr, 2);
  CHECK(rep.mpsnr_db > 20.0);
  CHECK(rep.mpsnr_db < kPsnrCapDb);
  CHECK(format_report(rep).find("MPSNR") != std::string::npos);
  CHECK(report_csv_header() == "dataset,config,r,mpsnr_db,mssim,sam_deg,rmse,bands_used");
  const auto row = report_csv_row(rep, "synth", "bicubic", 2);
  CHECK(std::count(row.begin(), row.end(), ',') == 7);
  CHECK(row.rfind("synth,bicubic,2,", 0) == 0);
}
