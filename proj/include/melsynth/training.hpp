#pragma once

#include "melsynth/checkpoint.hpp"
#include "melsynth/dataset.hpp"
#include "melsynth/diffusion.hpp"
#include "melsynth/model.hpp"

#include <functional>
#include <string>

namespace melsynth {

// Adam with a constant learning rate.
class Adam {
 public:
  Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void init(const std::vector<NamedParam<float>>& params);
  void load_state(std::vector<MatF> m, std::vector<MatF> v, int64_t step);
  void update(std::vector<NamedParam<float>>& params, const std::vector<MatF>& grads);

  int64_t step() const { return step_; }
  const std::vector<MatF>& m() const { return m_; }
  const std::vector<MatF>& v() const { return v_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t step_ = 0;
  std::vector<MatF> m_, v_;
};

struct TrainConfig {
  int64_t steps = 2000;
  int batch_size = 4;
  double learning_rate = 1e-3;
  double grad_clip_norm = 1.0;  // global-norm clip; <= 0 disables
  double cond_dropout_p = 0.1;  // [0, 1]; 1 trains fully unconditional
  uint64_t seed = 99;
  int log_every = 10;
  int64_t checkpoint_every = 0;  // 0: only final
  int threads = 0;               // 0: hardware concurrency
  // Token sequences are padded to the batch max rounded up to this multiple
  // (capped at the model's max positions). Full 2048-length behaviour is
  // covered by the architecture contract tests.
  int pad_multiple = 8;
  std::string out_dir;  // empty: no files written (in-memory training)
  // Optional early stop: stop when the smoothed loss drops below this.
  double early_stop_loss = -1.0;
  int early_stop_window = 50;
};

struct StepResult {
  double loss = 0.0;
  std::vector<MatF> grads;  // aligned with model parameters
};

// One diffusion step: per example t ~ U[0,1], eps ~ N(0,I), x_t = q_sample,
// conditioning dropped to null with cond_dropout_p, L1 eps-loss. Gradients
// are computed per example (in parallel) and reduced in example order, so
// results do not depend on the thread count.
StepResult diffusion_step_gradients(TransformerF& model,
                                    std::span<const SegmentExample* const> batch,
                                    double cond_dropout_p, Rng& step_rng, int threads);

// Teacher-forced MSE over all frames; no dither at training time.
StepResult autoregressive_step_gradients(TransformerF& model,
                                         std::span<const SegmentExample* const> batch,
                                         int threads);

double train_step_diffusion(TransformerF& model, Adam& opt,
                            std::span<const SegmentExample* const> batch, double cond_dropout_p,
                            Rng& step_rng, int threads = 1, double grad_clip_norm = 0.0);

double train_step_autoregressive(TransformerF& model, Adam& opt,
                                 std::span<const SegmentExample* const> batch, int threads = 1,
                                 double grad_clip_norm = 0.0);

void clip_gradients(std::vector<MatF>& grads, double max_norm);

struct TrainLogRow {
  int64_t step;
  double loss;
  double wall_time_s;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainLogRow> log;
  double final_loss = 0.0;
  int64_t steps_run = 0;
};

// Full training loop over a dataset. Writes loss.csv and checkpoints under
// cfg.out_dir when set. Deterministic given (cfg.seed, dataset); resuming
// from a mid-run checkpoint reproduces the uninterrupted run bit-exactly
// because per-step randomness is derived from (seed, step).
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const Dataset& dataset,
                  const Checkpoint* resume_from = nullptr);

TrainConfig train_config_from_kv(const class KvConfig& kv);

}  // namespace melsynth
