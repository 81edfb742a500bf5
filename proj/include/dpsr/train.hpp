#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "dpsr/autograd.hpp"
#include "dpsr/dataio.hpp"
#include "dpsr/model.hpp"

namespace dpsr {

struct TrainConfig {
  double lr = 1e-4;
  double alpha_s = 0.3;  // spectral-angle weight
  double alpha_g = 0.1;  // gradient-L1 weight
  std::uint32_t batch = 4;
  std::uint32_t max_epochs = 100;
  std::uint32_t max_steps = 0;  // 0: bounded by epochs only
  std::uint32_t patch = 16;     // HR patch side, divisible by the scale
  std::uint64_t seed = 0;
  std::uint32_t eval_every = 20;  // steps between validation passes
  std::uint32_t patience = 10;    // validation passes without improvement

  void validate() const;
};

struct LossParts {
  double total = 0.0, l1 = 0.0, sam = 0.0, grad = 0.0;
};

// L1 + alpha_s * mean spectral angle (radians) + alpha_g * gradient L1 on
// [L, X, C] tensors. Pixels where either spectrum has zero norm are left out
// of the angle term; the gradient term averages the forward-difference L1
// along lines and along columns.
template <typename T>
LossParts composite_loss(const Tensor<T>& pred, const Tensor<T>& target, double alpha_s, double alpha_g);
// Taped version; `parts` receives the unweighted terms when non-null.
template <typename T>
Var<T> composite_loss(const Var<T>& pred, const Tensor<T>& target, double alpha_s, double alpha_g,
                      LossParts* parts = nullptr);

struct AdamState {
  static constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<TensorD> m, v;
  std::uint64_t step = 0;
};

using NamedParams = std::vector<std::pair<std::string, TensorF*>>;

// One bias-corrected Adam update, no weight decay. Grads are checked for
// finiteness first; the offending parameter is named in the NumericError.
void adam_step(const NamedParams& params, const std::vector<TensorF>& grads, AdamState& state, double lr);

struct TrainLogRow {
  std::uint64_t step = 0;
  std::uint32_t epoch = 0;
  LossParts loss;
  double val_mpsnr = std::numeric_limits<double>::quiet_NaN();  // only on evaluation steps
};

struct FitResult {
  DpsrParams params;  // best validation checkpoint
  std::vector<TrainLogRow> log;
  double best_val_mpsnr = -std::numeric_limits<double>::infinity();
  std::uint64_t best_step = 0;
  std::uint64_t steps = 0;
  bool early_stopped = false;
};

using StepCallback = std::function<void(const TrainLogRow&)>;

// Trains on random augmented patches of the HR training cubes, degraded on
// the fly with bicubic_downsample. Everything random derives from cfg.seed.
// Throws NumericError if the loss goes non-finite.
FitResult fit(const std::vector<HsiCube>& train_hr, const std::vector<HsiCube>& val_hr, const DpsrConfig& model,
              const TrainConfig& cfg, const StepCallback& on_step = {});

// Continues from given parameters instead of a fresh init.
FitResult fit_from(DpsrParams init, const std::vector<HsiCube>& train_hr, const std::vector<HsiCube>& val_hr,
                   const TrainConfig& cfg, const StepCallback& on_step = {});

// Mean MPSNR of the streamed-equivalent batch forward over HR cubes.
double validation_mpsnr(const DpsrParams& p, const std::vector<HsiCube>& val_hr);
// Mean bicubic-baseline MPSNR over the same cubes.
double baseline_mpsnr(const std::vector<HsiCube>& val_hr, std::uint32_t r);

// Runs the whole-image path on an LR cube and wraps the result as a cube.
HsiCube super_resolve(const DpsrParams& p, const HsiCube& lr);

std::string train_log_csv_header();
std::string train_log_csv_row(const TrainLogRow& row);

}  // namespace dpsr
