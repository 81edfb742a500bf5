#include "dpsr/train.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <sstream>

#include "dpsr/metrics.hpp"

namespace dpsr {

namespace {

template <typename T>
LossParts loss_and_grad(const Tensor<T>& pred, const Tensor<T>& target, double alpha_s, double alpha_g,
                        std::vector<double>* grad) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("loss: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
  }
  if (pred.rank() != 3) throw ShapeError("loss: expected [L, X, C], got " + shape_str(pred.shape()));
  if (pred.empty()) throw ContractError("loss: empty tensors");
  const std::size_t L = pred.dim(0), X = pred.dim(1), C = pred.dim(2), n = pred.size();
  if (grad) grad->assign(n, 0.0);
  auto sgn = [](double d) { return d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0); };
  LossParts parts;

  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    parts.l1 += std::abs(d);
    if (grad) (*grad)[i] += sgn(d) / static_cast<double>(n);
  }
  parts.l1 /= static_cast<double>(n);

  // Spectral angle via the chord between unit vectors.
  std::size_t counted = 0;
  std::vector<double> ph(C), th(C), gp(C);
  std::vector<std::pair<std::size_t, std::vector<double>>> sam_grads;
  for (std::size_t px = 0; px < L * X; ++px) {
    const std::size_t base = px * C;
    double np = 0.0, nt = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      np += static_cast<double>(pred[base + c]) * pred[base + c];
      nt += static_cast<double>(target[base + c]) * target[base + c];
    }
    if (np == 0.0 || nt == 0.0) continue;
    np = std::sqrt(np);
    nt = std::sqrt(nt);
    double s2 = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      ph[c] = pred[base + c] / np;
      th[c] = target[base + c] / nt;
      s2 += (ph[c] - th[c]) * (ph[c] - th[c]);
    }
    const double s = std::sqrt(s2);
    const double half = std::min(1.0, s / 2.0);
    parts.sam += 2.0 * std::asin(half);
    ++counted;
    if (grad && s > 0.0 && half < 1.0) {
      // d(angle)/ds = 1 / sqrt(1 - s^2/4); ds/dph = (ph - th)/s; project through the normalization.
      const double k = 1.0 / (std::sqrt(1.0 - half * half) * s);
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        gp[c] = k * (ph[c] - th[c]);
        dot += gp[c] * ph[c];
      }
      std::vector<double> g(C);
      for (std::size_t c = 0; c < C; ++c) g[c] = (gp[c] - ph[c] * dot) / np;
      sam_grads.emplace_back(base, std::move(g));
    }
  }
  if (counted) {
    parts.sam /= static_cast<double>(counted);
    if (grad) {
      for (const auto& [base, g] : sam_grads)
        for (std::size_t c = 0; c < C; ++c) (*grad)[base + c] += alpha_s * g[c] / static_cast<double>(counted);
    }
  }

  // Forward differences along lines (stride X*C) and columns (stride C).
  auto axis_term = [&](std::size_t stride, std::size_t count) {
    if (count == 0) return 0.0;
    double acc = 0.0;
    const double wgt = 0.5 / static_cast<double>(count);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t x = 0; x < X; ++x) {
        const bool has_next = stride == C ? x + 1 < X : l + 1 < L;
        if (!has_next) continue;
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t i = (l * X + x) * C + c;
          const double d = (static_cast<double>(pred[i + stride]) - pred[i]) -
                           (static_cast<double>(target[i + stride]) - target[i]);
          acc += std::abs(d);
          if (grad) {
            const double g = alpha_g * wgt * sgn(d);
            (*grad)[i + stride] += g;
            (*grad)[i] -= g;
          }
        }
      }
    return 0.5 * acc / static_cast<double>(count);
  };
  parts.grad = axis_term(X * C, (L - 1) * X * C) + axis_term(C, L * (X - 1) * C);
  parts.total = parts.l1 + alpha_s * parts.sam + alpha_g * parts.grad;
  return parts;
}

// Crop, augment and degrade one training sample.
std::pair<TensorF, TensorF> make_sample(const HsiCube& hr, std::uint32_t patch, std::uint32_t r, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::uint32_t> ys(0, hr.height - patch), xs(0, hr.width - patch), aug(0, 7);
  const std::uint32_t y0 = ys(rng), x0 = xs(rng);
  const HsiCube p = augment(crop(hr, y0, x0, patch, patch), aug(rng));
  const HsiCube lr = bicubic_downsample(p, r);
  return {lr.to_tensor(), p.lines(0, p.height - r).to_tensor()};
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ContractError("train: lr must be finite and positive");
  if (!(alpha_s >= 0.0) || !(alpha_g >= 0.0)) throw ContractError("train: loss weights must be non-negative");
  if (batch == 0) throw ContractError("train: batch must be positive");
  if (patch == 0) throw ContractError("train: patch must be positive");
  if (eval_every == 0) throw ContractError("train: eval_every must be positive");
}

template <typename T>
LossParts composite_loss(const Tensor<T>& pred, const Tensor<T>& target, double alpha_s, double alpha_g) {
  return loss_and_grad(pred, target, alpha_s, alpha_g, nullptr);
}

template <typename T>
Var<T> composite_loss(const Var<T>& pred, const Tensor<T>& target, double alpha_s, double alpha_g, LossParts* parts) {
  auto g = std::make_shared<std::vector<double>>();
  const LossParts lp = loss_and_grad(pred.value(), target, alpha_s, alpha_g, g.get());
  if (parts) *parts = lp;
  const std::size_t in = pred.id();
  return pred.tape().record(Tensor<T>::scalar(static_cast<T>(lp.total)), {in}, [g, in](Tape<T>& tape, std::size_t self) {
    const double up = tape.grad(self).item();
    Tensor<T>& dst = tape.grad_accum(in);
    for (std::size_t i = 0; i < g->size(); ++i) dst[i] += static_cast<T>(up * (*g)[i]);
  });
}

template LossParts composite_loss(const Tensor<float>&, const Tensor<float>&, double, double);
template LossParts composite_loss(const Tensor<double>&, const Tensor<double>&, double, double);
template Var<float> composite_loss(const Var<float>&, const Tensor<float>&, double, double, LossParts*);
template Var<double> composite_loss(const Var<double>&, const Tensor<double>&, double, double, LossParts*);

void adam_step(const NamedParams& params, const std::vector<TensorF>& grads, AdamState& state, double lr) {
  if (grads.size() != params.size()) throw ContractError("adam_step: gradient count does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].second->shape()) {
      throw ShapeError("adam_step: gradient shape mismatch for " + params[i].first);
    }
    if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient in " + params[i].first);
  }
  if (state.m.empty()) {
    for (const auto& [name, p] : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(AdamState::beta1, t), bc2 = 1.0 - std::pow(AdamState::beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    TensorF& p = *params[i].second;
    TensorD &m = state.m[i], &v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = grads[i][j];
      const double mj = AdamState::beta1 * m[j] + (1.0 - AdamState::beta1) * g;
      const double vj = AdamState::beta2 * v[j] + (1.0 - AdamState::beta2) * g * g;
      m[j] = mj;
      v[j] = vj;
      p[j] = static_cast<float>(p[j] - lr * (mj / bc1) / (std::sqrt(vj / bc2) + AdamState::eps));
    }
  }
}

HsiCube super_resolve(const DpsrParams& p, const HsiCube& lr) {
  HsiCube out = HsiCube::from_tensor(dpsr_forward_image(lr.to_tensor(), p));
  out.band_valid = lr.band_valid;
  return out;
}

double validation_mpsnr(const DpsrParams& p, const std::vector<HsiCube>& val_hr) {
  if (val_hr.empty()) throw ContractError("validation: no cubes");
  const std::uint32_t r = p.config.scale;
  double total = 0.0;
  for (const auto& hr : val_hr) total += evaluate(super_resolve(p, bicubic_downsample(hr, r)), hr, r).mpsnr_db;
  return total / static_cast<double>(val_hr.size());
}

double baseline_mpsnr(const std::vector<HsiCube>& val_hr, std::uint32_t r) {
  if (val_hr.empty()) throw ContractError("baseline: no cubes");
  double total = 0.0;
  for (const auto& hr : val_hr) total += baseline_bicubic(hr, r).mpsnr_db;
  return total / static_cast<double>(val_hr.size());
}

FitResult fit(const std::vector<HsiCube>& train_hr, const std::vector<HsiCube>& val_hr, const DpsrConfig& model,
              const TrainConfig& cfg, const StepCallback& on_step) {
  return fit_from(init_params(model, cfg.seed), train_hr, val_hr, cfg, on_step);
}

FitResult fit_from(DpsrParams params, const std::vector<HsiCube>& train_hr, const std::vector<HsiCube>& val_hr,
                   const TrainConfig& cfg, const StepCallback& on_step) {
  cfg.validate();
  params.config.validate();
  const std::uint32_t r = params.config.scale;
  if (train_hr.empty()) throw ContractError("fit: no training cubes");
  if (cfg.patch % r != 0 || cfg.patch / r < 2) {
    throw ContractError("fit: patch " + std::to_string(cfg.patch) + " must be a multiple of the scale with >= 2 LR lines");
  }
  for (const auto& c : train_hr) {
    if (c.bands != params.config.bands) throw ContractError("fit: training cube band count differs from the model");
    if (c.height < cfg.patch || c.width < cfg.patch) throw ContractError("fit: training cube smaller than the patch");
  }

  std::mt19937_64 rng(cfg.seed ^ 0x5eed5eed5eedULL);
  std::uniform_int_distribution<std::size_t> pick(0, train_hr.size() - 1);
  const std::uint64_t steps_per_epoch = (train_hr.size() + cfg.batch - 1) / cfg.batch;
  std::uint64_t total_steps = steps_per_epoch * cfg.max_epochs;
  if (cfg.max_steps > 0) total_steps = std::min<std::uint64_t>(total_steps, cfg.max_steps);

  FitResult res;
  res.params = params;
  AdamState adam;
  std::uint32_t stale = 0;
  auto evaluate_now = [&](TrainLogRow& row) {
    if (val_hr.empty()) return;
    row.val_mpsnr = validation_mpsnr(params, val_hr);
    if (row.val_mpsnr > res.best_val_mpsnr) {
      res.best_val_mpsnr = row.val_mpsnr;
      res.best_step = row.step;
      res.params = params;
      stale = 0;
    } else {
      ++stale;
    }
  };

  for (std::uint64_t step = 1; step <= total_steps; ++step) {
    Tape<float> tape;
    const auto vars = to_vars(tape, params);
    Var<float> loss;
    LossParts sum_parts;
    for (std::uint32_t b = 0; b < cfg.batch; ++b) {
      const auto [lr, target] = make_sample(train_hr[pick(rng)], cfg.patch, r, rng);
      LossParts parts;
      const Var<float> l = composite_loss(dpsr_forward_image(lr, vars, tape), target, cfg.alpha_s, cfg.alpha_g, &parts);
      loss = b == 0 ? l : add(loss, l);
      sum_parts.total += parts.total;
      sum_parts.l1 += parts.l1;
      sum_parts.sam += parts.sam;
      sum_parts.grad += parts.grad;
    }
    const double nb = cfg.batch;
    loss = scale(loss, static_cast<float>(1.0 / nb));
    TrainLogRow row;
    row.step = step;
    row.epoch = static_cast<std::uint32_t>((step - 1) / steps_per_epoch);
    row.loss = {sum_parts.total / nb, sum_parts.l1 / nb, sum_parts.sam / nb, sum_parts.grad / nb};
    if (!std::isfinite(row.loss.total)) {
      res.log.push_back(row);
      if (on_step) on_step(row);
      throw NumericError("fit: loss diverged (non-finite) at step " + std::to_string(step));
    }
    tape.backward(loss);

    NamedParams named = param_list(params);
    std::vector<TensorF> grads;
    grads.reserve(named.size());
    const auto var_list = param_list(vars);
    for (const auto& [name, v] : var_list) grads.push_back(v->grad());
    adam_step(named, grads, adam, cfg.lr);

    if (step % cfg.eval_every == 0 || step == total_steps) evaluate_now(row);
    res.log.push_back(row);
    res.steps = step;
    if (on_step) on_step(row);
    if (!val_hr.empty() && stale >= cfg.patience) {
      res.early_stopped = true;
      break;
    }
  }
  if (val_hr.empty()) res.params = params;
  return res;
}

std::string train_log_csv_header() { return "step,epoch,loss,l1,sam,grad,val_mpsnr"; }

std::string train_log_csv_row(const TrainLogRow& row) {
  std::ostringstream os;
  os.precision(9);
  os << row.step << ',' << row.epoch << ',' << row.loss.total << ',' << row.loss.l1 << ',' << row.loss.sam << ','
     << row.loss.grad << ',';
  if (!std::isnan(row.val_mpsnr)) os << row.val_mpsnr;
  return os.str();
}

}  // namespace dpsr
