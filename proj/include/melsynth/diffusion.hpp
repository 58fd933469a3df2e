#pragma once

#include "melsynth/common.hpp"
#include "melsynth/rng.hpp"

#include <functional>

namespace melsynth {

// Cosine schedule over continuous diffusion time t in [0, 1]:
//   alpha(t) = cos(t*pi/2), sigma(t) = sin(t*pi/2)  (amplitudes, so
//   alpha^2 + sigma^2 = 1 and the signal variance is cos(t*pi/2)^2),
//   logsnr(t) = 2*(log alpha - log sigma) clamped to [-20, 20],
//   w(t) = 1 (uniform epsilon-loss weighting).
struct SchedulePoint {
  double alpha;
  double sigma;
  double logsnr;
  double loss_weight;
};

inline constexpr double kLogSnrClamp = 20.0;

SchedulePoint schedule_at(double t);

// x_t = alpha(t) * x + sigma(t) * eps.
template <class T>
Mat<T> q_sample(const Mat<T>& x, double t, const Mat<T>& eps) {
  if (x.rows() != eps.rows() || x.cols() != eps.cols())
    throw ValueError("q_sample: shape mismatch");
  auto s = schedule_at(t);
  return (static_cast<T>(s.alpha) * x + static_cast<T>(s.sigma) * eps).eval();
}

// w(t) * mean(|eps_pred - eps|).
template <class T>
double ddpm_loss(const Mat<T>& eps_pred, const Mat<T>& eps, double t) {
  if (eps_pred.rows() != eps.rows() || eps_pred.cols() != eps.cols())
    throw ValueError("ddpm_loss: shape mismatch");
  auto s = schedule_at(t);
  return s.loss_weight * (eps_pred - eps).template cast<double>().cwiseAbs().mean();
}

struct GuidanceConfig {
  double cond_dropout_p = 0.1;
  double guidance_weight = 2.0;
  // If set, the guidance weight is read as "w extra" so the effective weight
  // becomes 1 + guidance_weight.
  bool weight_plus_one = false;

  double effective_weight() const { return weight_plus_one ? 1.0 + guidance_weight : guidance_weight; }
  void validate() const {
    if (cond_dropout_p < 0.0 || cond_dropout_p >= 1.0)
      throw ValueError("guidance: cond_dropout_p must be in [0, 1)");
    if (guidance_weight < 0.0) throw ValueError("guidance: weight must be >= 0");
  }
};

// eps_uncond + w * (eps_cond - eps_uncond).
template <class T>
Mat<T> cfg_combine(const Mat<T>& eps_cond, const Mat<T>& eps_uncond, double w) {
  if (eps_cond.rows() != eps_uncond.rows() || eps_cond.cols() != eps_uncond.cols())
    throw ValueError("cfg_combine: shape mismatch");
  return (eps_uncond + static_cast<T>(w) * (eps_cond - eps_uncond)).eval();
}

// Denoiser callback: (x_t, t, null_conditioning) -> eps_pred of the same shape.
using DenoiserFn = std::function<MatF(const MatF& x_t, double t, bool null_cond)>;

struct SamplerOptions {
  int num_steps = 1000;
  double guidance_weight = 2.0;
  bool weight_plus_one = false;
  uint64_t seed = 0;
};

// Ancestral DDPM reverse sampling over num_steps linearly spaced times in
// [0, 1], using the discretized cosine schedule (per-step beta clipped to
// 0.999, posterior variance ((1-abar_s)/(1-abar_t))*beta, no noise on the
// final step). Deterministic given the seed; output clamped to [-1, 1].
MatF reverse_sample(const DenoiserFn& denoiser, int rows, int cols, const SamplerOptions& opts);

}  // namespace melsynth
