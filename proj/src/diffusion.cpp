#include "melsynth/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace melsynth {

SchedulePoint schedule_at(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ValueError("schedule_at: t must be in [0, 1]");
  SchedulePoint p;
  p.alpha = std::cos(t * M_PI / 2.0);
  p.sigma = std::sin(t * M_PI / 2.0);
  double logsnr;
  if (p.sigma <= 0.0)
    logsnr = kLogSnrClamp;
  else if (p.alpha <= 0.0)
    logsnr = -kLogSnrClamp;
  else
    logsnr = 2.0 * (std::log(p.alpha) - std::log(p.sigma));
  p.logsnr = std::clamp(logsnr, -kLogSnrClamp, kLogSnrClamp);
  p.loss_weight = 1.0;
  return p;
}

MatF reverse_sample(const DenoiserFn& denoiser, int rows, int cols, const SamplerOptions& opts) {
  if (opts.num_steps < 1) throw ValueError("reverse_sample: num_steps must be >= 1");
  if (rows <= 0 || cols <= 0) throw ValueError("reverse_sample: bad shape");
  const double w = opts.weight_plus_one ? 1.0 + opts.guidance_weight : opts.guidance_weight;
  if (w < 0.0) throw ValueError("reverse_sample: guidance weight must be >= 0");

  Rng rng(opts.seed);
  MatF x(rows, cols);
  rng.fill_normal(x);

  const int n = opts.num_steps;
  auto abar = [](double t) {
    const double a = std::cos(t * M_PI / 2.0);
    return a * a;
  };
  for (int k = n; k >= 1; --k) {
    const double t = static_cast<double>(k) / n;
    const double s = static_cast<double>(k - 1) / n;
    const double abar_t = abar(t);
    const double abar_s = abar(s);
    const double beta = std::min(1.0 - abar_t / abar_s, 0.999);
    const double alpha_step = 1.0 - beta;

    MatF eps_hat;
    if (w == 0.0) {
      eps_hat = denoiser(x, t, /*null_cond=*/true);
    } else if (w == 1.0) {
      eps_hat = denoiser(x, t, /*null_cond=*/false);
    } else {
      MatF eps_cond = denoiser(x, t, /*null_cond=*/false);
      MatF eps_uncond = denoiser(x, t, /*null_cond=*/true);
      eps_hat = cfg_combine(eps_cond, eps_uncond, w);
    }
    if (eps_hat.rows() != rows || eps_hat.cols() != cols)
      throw ValueError("reverse_sample: denoiser returned wrong shape");

    const double mean_scale = 1.0 / std::sqrt(alpha_step);
    const double eps_scale = beta / std::sqrt(std::max(1.0 - abar_t, 1e-20));
    x = (mean_scale * (x.cast<double>() - eps_scale * eps_hat.cast<double>())).cast<float>();
    if (k > 1) {
      const double var = (1.0 - abar_s) / (1.0 - abar_t) * beta;
      if (var > 0.0) {
        MatF z(rows, cols);
        rng.fill_normal(z);
        x += static_cast<float>(std::sqrt(var)) * z;
      }
    }
  }
  return x.cwiseMax(-1.0f).cwiseMin(1.0f);
}

}  // namespace melsynth
