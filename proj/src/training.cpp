#include "melsynth/training.hpp"

#include "melsynth/config.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

namespace melsynth {

namespace fs = std::filesystem;

void Adam::init(const std::vector<NamedParam<float>>& params) {
  step_ = 0;
  m_.clear();
  v_.clear();
  for (const auto& p : params) {
    m_.push_back(MatF::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(MatF::Zero(p.value.rows(), p.value.cols()));
  }
}

void Adam::load_state(std::vector<MatF> m, std::vector<MatF> v, int64_t step) {
  m_ = std::move(m);
  v_ = std::move(v);
  step_ = step;
}

void Adam::update(std::vector<NamedParam<float>>& params, const std::vector<MatF>& grads) {
  if (grads.size() != params.size() || m_.size() != params.size())
    throw ValueError("adam: state/gradient size mismatch");
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  const float lr = static_cast<float>(lr_ * std::sqrt(bc2) / bc1);
  const auto b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const auto eps = static_cast<float>(eps_);
  for (size_t i = 0; i < params.size(); ++i) {
    const MatF& g = grads[i];
    if (g.size() == 0) continue;  // parameter unused this step
    m_[i] = b1 * m_[i] + (1.0f - b1) * g;
    v_[i] = (b2 * v_[i].array() + (1.0f - b2) * g.array().square()).matrix();
    params[i].value.array() -= lr * m_[i].array() / (v_[i].array().sqrt() + eps);
  }
}

namespace {

// Pads to the batch max length rounded up to pad_multiple, capped at the
// model's note-position limit.
std::vector<int> pad_tokens(const TokenSeq& tokens, int target_len, int pad_id) {
  std::vector<int> out(tokens.begin(), tokens.end());
  if (static_cast<int>(out.size()) > target_len) out.resize(static_cast<size_t>(target_len));
  out.resize(static_cast<size_t>(target_len), pad_id);
  return out;
}

int padded_len(std::span<const SegmentExample* const> batch, int multiple, int cap) {
  int longest = 1;
  for (const auto* ex : batch) longest = std::max(longest, static_cast<int>(ex->tokens.size()));
  const int rounded = ((longest + multiple - 1) / multiple) * multiple;
  return std::min(rounded, cap);
}

struct PerExampleDraw {
  double t = 0.0;
  bool null_cond = false;
  MatF eps;
};

void reduce_gradients(StepResult& result, const TransformerF& model,
                      const std::vector<std::unordered_map<int, MatF>>& per_example,
                      double inv_batch) {
  const auto& params = model.params();
  result.grads.assign(params.size(), MatF());
  for (size_t i = 0; i < params.size(); ++i) {
    MatF acc;
    for (const auto& grads : per_example) {
      auto it = grads.find(static_cast<int>(i));
      if (it == grads.end()) continue;
      if (acc.size() == 0)
        acc = it->second;
      else
        acc += it->second;
    }
    if (acc.size() != 0) result.grads[i] = (acc.array() * static_cast<float>(inv_batch)).matrix();
  }
}

void run_parallel(int jobs, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || jobs <= 1) {
    for (int j = 0; j < jobs; ++j) fn(j);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  const int workers = std::min(jobs, threads);
  std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (int j = next.fetch_add(1); j < jobs; j = next.fetch_add(1)) fn(j);
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

int resolve_threads(int threads) {
  if (threads > 0) return threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace

StepResult diffusion_step_gradients(TransformerF& model,
                                    std::span<const SegmentExample* const> batch,
                                    double cond_dropout_p, Rng& step_rng, int threads) {
  if (batch.empty()) throw ValueError("diffusion_step_gradients: empty batch");
  if (cond_dropout_p < 0.0 || cond_dropout_p > 1.0)
    throw ValueError("diffusion_step_gradients: dropout must be in [0, 1]");
  const ModelConfig& cfg = model.config();
  const int target_len = padded_len(batch, 8, cfg.max_note_positions);

  // Draw all per-example randomness up front, in example order, so the
  // result is independent of the execution schedule.
  std::vector<PerExampleDraw> draws(batch.size());
  for (auto& d : draws) {
    d.t = step_rng.uniform();
    d.null_cond = step_rng.bernoulli(cond_dropout_p);
    d.eps = MatF(cfg.decoder_positions, cfg.mel_bins);
    step_rng.fill_normal(d.eps);
  }

  std::vector<std::unordered_map<int, MatF>> per_example(batch.size());
  std::vector<double> losses(batch.size(), 0.0);
  run_parallel(static_cast<int>(batch.size()), resolve_threads(threads), [&](int j) {
    const SegmentExample& ex = *batch[static_cast<size_t>(j)];
    const PerExampleDraw& d = draws[static_cast<size_t>(j)];
    MatF x_t = q_sample(ex.target, d.t, d.eps);

    Tape<float> tape;
    TransformerF::Fwd f(tape, model);
    std::vector<int> tokens = pad_tokens(ex.tokens, target_len, model.pad_token());
    auto cond = model.make_cond_vars(f, tokens, &ex.context, d.null_cond);
    auto pred = model.diffusion_decode(f, x_t, d.t, cond);
    auto loss = tape.mean_abs(tape.sub(pred, tape.input(d.eps)));
    const auto s = schedule_at(d.t);
    if (s.loss_weight != 1.0) loss = tape.scale(loss, static_cast<float>(s.loss_weight));
    losses[static_cast<size_t>(j)] = tape.value(loss)(0, 0);
    tape.backward(loss);
    per_example[static_cast<size_t>(j)] = tape.param_grads();
  });

  StepResult result;
  for (double l : losses) result.loss += l;
  result.loss /= static_cast<double>(batch.size());
  reduce_gradients(result, model, per_example, 1.0 / static_cast<double>(batch.size()));
  return result;
}

StepResult autoregressive_step_gradients(TransformerF& model,
                                         std::span<const SegmentExample* const> batch,
                                         int threads) {
  if (batch.empty()) throw ValueError("autoregressive_step_gradients: empty batch");
  const ModelConfig& cfg = model.config();
  const int target_len = padded_len(batch, 8, cfg.max_note_positions);

  std::vector<std::unordered_map<int, MatF>> per_example(batch.size());
  std::vector<double> losses(batch.size(), 0.0);
  run_parallel(static_cast<int>(batch.size()), resolve_threads(threads), [&](int j) {
    const SegmentExample& ex = *batch[static_cast<size_t>(j)];
    Tape<float> tape;
    TransformerF::Fwd f(tape, model);
    std::vector<int> tokens = pad_tokens(ex.tokens, target_len, model.pad_token());
    auto cond = model.make_cond_vars(f, tokens, &ex.context, false);
    auto pred = model.ar_decode(f, ex.target, cond);
    auto loss = tape.mean_sq(tape.sub(pred, tape.input(ex.target)));
    losses[static_cast<size_t>(j)] = tape.value(loss)(0, 0);
    tape.backward(loss);
    per_example[static_cast<size_t>(j)] = tape.param_grads();
  });

  StepResult result;
  for (double l : losses) result.loss += l;
  result.loss /= static_cast<double>(batch.size());
  reduce_gradients(result, model, per_example, 1.0 / static_cast<double>(batch.size()));
  return result;
}

namespace {

void check_finite(double loss, int64_t step, const TransformerF& model) {
  if (std::isfinite(loss)) return;
  double pnorm = 0.0;
  for (const auto& p : model.params()) pnorm += p.value.cast<double>().squaredNorm();
  throw Error("training diverged at step " + std::to_string(step) + ": loss=" +
              std::to_string(loss) + ", parameter norm=" + std::to_string(std::sqrt(pnorm)));
}

}  // namespace

void clip_gradients(std::vector<MatF>& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const MatF& g : grads)
    if (g.size()) sq += g.cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const float scale = static_cast<float>(max_norm / norm);
  for (MatF& g : grads)
    if (g.size()) g *= scale;
}

double train_step_diffusion(TransformerF& model, Adam& opt,
                            std::span<const SegmentExample* const> batch, double cond_dropout_p,
                            Rng& step_rng, int threads, double grad_clip_norm) {
  StepResult r = diffusion_step_gradients(model, batch, cond_dropout_p, step_rng, threads);
  check_finite(r.loss, opt.step(), model);
  clip_gradients(r.grads, grad_clip_norm);
  opt.update(model.mutable_params(), r.grads);
  return r.loss;
}

double train_step_autoregressive(TransformerF& model, Adam& opt,
                                 std::span<const SegmentExample* const> batch, int threads,
                                 double grad_clip_norm) {
  StepResult r = autoregressive_step_gradients(model, batch, threads);
  check_finite(r.loss, opt.step(), model);
  clip_gradients(r.grads, grad_clip_norm);
  opt.update(model.mutable_params(), r.grads);
  return r.loss;
}

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const Dataset& dataset,
                  const Checkpoint* resume_from) {
  if (dataset.examples.empty()) throw ValueError("train: empty dataset");
  if (cfg.batch_size < 1) throw ValueError("train: batch_size must be >= 1");

  TransformerF model(model_cfg);
  Adam opt(cfg.learning_rate);
  opt.init(model.params());
  int64_t start_step = 0;
  if (resume_from) {
    if (!resume_from->train_state)
      throw VersionError("resume checkpoint carries no training state");
    model = resume_from->build_model();
    const TrainState& ts = *resume_from->train_state;
    if (ts.master_seed != cfg.seed)
      throw VersionError("resume checkpoint was trained with a different seed");
    opt.load_state(ts.adam_m, ts.adam_v, ts.step);
    start_step = ts.step;
  }

  const Vocabulary vocab;
  auto make_checkpoint = [&]() {
    Checkpoint ckpt;
    ckpt.model_config = model_cfg;
    ckpt.spec_config = dataset.config.spec;
    ckpt.scale_lo = dataset.scale_lo;
    ckpt.scale_hi = dataset.scale_hi;
    ckpt.vocab_hash = vocab.layout_hash();
    ckpt.params = model.params();
    TrainState ts;
    ts.step = opt.step();
    ts.master_seed = cfg.seed;
    ts.adam_m = opt.m();
    ts.adam_v = opt.v();
    ckpt.train_state = std::move(ts);
    return ckpt;
  };

  std::ofstream loss_log;
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    const auto mode = start_step > 0 ? std::ios::app : std::ios::trunc;
    loss_log.open(fs::path(cfg.out_dir) / "loss.csv", mode);
    if (start_step == 0) loss_log << "step,loss,wall_time_s\n";
  }

  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> recent;
  for (int64_t step = start_step; step < cfg.steps; ++step) {
    // Per-step stream keyed by (seed, step): resume-invariant randomness.
    Rng step_rng(mix_seed(cfg.seed, static_cast<uint64_t>(step)));
    std::vector<const SegmentExample*> batch;
    for (int b = 0; b < cfg.batch_size; ++b)
      batch.push_back(&dataset.examples[step_rng.uniform_int(dataset.examples.size())]);

    double loss;
    if (model_cfg.mode == DecoderMode::kDiffusion)
      loss = train_step_diffusion(model, opt, batch, cfg.cond_dropout_p, step_rng, cfg.threads,
                                  cfg.grad_clip_norm);
    else
      loss = train_step_autoregressive(model, opt, batch, cfg.threads, cfg.grad_clip_norm);

    result.final_loss = loss;
    result.steps_run = step + 1;
    recent.push_back(loss);
    if (static_cast<int>(recent.size()) > cfg.early_stop_window) recent.erase(recent.begin());

    if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.log.push_back({step + 1, loss, wall});
      if (loss_log.is_open())
        loss_log << (step + 1) << "," << loss << "," << wall << "\n" << std::flush;
    }
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        !cfg.out_dir.empty()) {
      save_checkpoint((fs::path(cfg.out_dir) / ("checkpoint_" + std::to_string(step + 1) +
                                                ".msck")).string(),
                      make_checkpoint());
    }
    if (cfg.early_stop_loss > 0.0 &&
        static_cast<int>(recent.size()) >= cfg.early_stop_window) {
      double avg = 0.0;
      for (double l : recent) avg += l;
      avg /= static_cast<double>(recent.size());
      if (avg < cfg.early_stop_loss) break;
    }
  }

  result.checkpoint = make_checkpoint();
  if (!cfg.out_dir.empty())
    save_checkpoint((fs::path(cfg.out_dir) / "checkpoint_final.msck").string(),
                    result.checkpoint);
  return result;
}

TrainConfig train_config_from_kv(const KvConfig& kv) {
  TrainConfig cfg;
  cfg.steps = kv.get_int("train.steps", cfg.steps);
  cfg.batch_size = static_cast<int>(kv.get_int("train.batch_size", cfg.batch_size));
  cfg.learning_rate = kv.get_double("train.learning_rate", cfg.learning_rate);
  cfg.grad_clip_norm = kv.get_double("train.grad_clip_norm", cfg.grad_clip_norm);
  cfg.cond_dropout_p = kv.get_double("train.cond_dropout_p", cfg.cond_dropout_p);
  cfg.seed = static_cast<uint64_t>(kv.get_int("train.seed", static_cast<int64_t>(cfg.seed)));
  cfg.log_every = static_cast<int>(kv.get_int("train.log_every", cfg.log_every));
  cfg.checkpoint_every = kv.get_int("train.checkpoint_every", cfg.checkpoint_every);
  cfg.threads = static_cast<int>(kv.get_int("train.threads", cfg.threads));
  cfg.early_stop_loss = kv.get_double("train.early_stop_loss", cfg.early_stop_loss);
  return cfg;
}

}  // namespace melsynth
