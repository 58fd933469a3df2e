#pragma once

#include "melsynth/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace melsynth {

template <class T>
Mat<T> sinusoid_features(double value, int dim) {
  if (dim % 2 != 0) throw ValueError("sinusoid_features: dim must be even");
  Mat<T> out(1, dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::exp(-std::log(10000.0) * (2.0 * i) / dim);
    out(0, 2 * i) = static_cast<T>(std::sin(value * freq));
    out(0, 2 * i + 1) = static_cast<T>(std::cos(value * freq));
  }
  return out;
}

template <class T>
Mat<T> decorrelated_positions(int length, int dim, std::optional<uint64_t> stack_seed) {
  if (dim % 2 != 0) throw ValueError("decorrelated_positions: dim must be even");
  std::vector<double> phase(static_cast<size_t>(dim), 0.0);
  std::vector<int> perm(static_cast<size_t>(dim));
  std::iota(perm.begin(), perm.end(), 0);
  if (stack_seed) {
    Rng rng(*stack_seed);
    for (auto& p : phase) p = rng.uniform(0.0, 2.0 * M_PI);
    for (int i = dim - 1; i > 0; --i)
      std::swap(perm[static_cast<size_t>(i)], perm[rng.uniform_int(static_cast<uint64_t>(i + 1))]);
  }
  Mat<T> out(length, dim);
  for (int pos = 0; pos < length; ++pos)
    for (int i = 0; i < dim / 2; ++i) {
      const double freq = std::exp(-std::log(10000.0) * (2.0 * i) / dim);
      const int sin_col = perm[static_cast<size_t>(2 * i)];
      const int cos_col = perm[static_cast<size_t>(2 * i + 1)];
      out(pos, sin_col) = static_cast<T>(std::sin(pos * freq + phase[static_cast<size_t>(2 * i)]));
      out(pos, cos_col) =
          static_cast<T>(std::cos(pos * freq + phase[static_cast<size_t>(2 * i + 1)]));
    }
  return out;
}

template <class T>
int Transformer<T>::add_param(const std::string& name, int rows, int cols, Rng& rng,
                              double stddev) {
  NamedParam<T> p;
  p.name = name;
  p.value.resize(rows, cols);
  if (stddev > 0.0)
    rng.fill_normal(p.value, stddev);
  else if (stddev == 0.0)
    p.value.setZero();
  else
    p.value.setOnes();  // stddev < 0 marks gain vectors
  int idx = static_cast<int>(params_.size());
  params_.push_back(std::move(p));
  index_[name] = idx;
  return idx;
}

// Small noise plus an identity block: the decoder starts out passing the
// noisy spectrogram through to the output, which gives epsilon prediction
// near t = 1 a working starting point.
template <class T>
int Transformer<T>::add_identity_param(const std::string& name, int rows, int cols, Rng& rng,
                                       double stddev) {
  const int idx = add_param(name, rows, cols, rng, stddev);
  Mat<T>& v = params_[static_cast<size_t>(idx)].value;
  for (int i = 0; i < std::min(rows, cols); ++i) v(i, i) += static_cast<T>(1);
  return idx;
}

template <class T>
typename Transformer<T>::AttnIdx Transformer<T>::add_attn(const std::string& prefix, Rng& rng) {
  const int e = cfg_.embed_dim, a = cfg_.attn_dim();
  AttnIdx idx;
  idx.wq = add_param(prefix + ".wq", e, a, rng, 1.0 / std::sqrt(e));
  idx.wk = add_param(prefix + ".wk", e, a, rng, 1.0 / std::sqrt(e));
  idx.wv = add_param(prefix + ".wv", e, a, rng, 1.0 / std::sqrt(e));
  idx.wo = add_param(prefix + ".wo", a, e, rng, 1.0 / std::sqrt(a));
  return idx;
}

template <class T>
typename Transformer<T>::MlpIdx Transformer<T>::add_mlp(const std::string& prefix, Rng& rng) {
  const int e = cfg_.embed_dim, m = cfg_.mlp_dim;
  MlpIdx idx;
  idx.w0 = add_param(prefix + ".w0", e, m, rng, 1.0 / std::sqrt(e));
  idx.w1 = add_param(prefix + ".w1", e, m, rng, 1.0 / std::sqrt(e));
  idx.wo = add_param(prefix + ".wo", m, e, rng, 1.0 / std::sqrt(m));
  return idx;
}

template <class T>
std::vector<typename Transformer<T>::EncLayerIdx> Transformer<T>::add_encoder(
    const std::string& prefix, Rng& rng) {
  std::vector<EncLayerIdx> layers;
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string lp = prefix + ".l" + std::to_string(l);
    EncLayerIdx layer;
    layer.norm1 = add_param(lp + ".norm1", 1, cfg_.embed_dim, rng, -1.0);
    layer.attn = add_attn(lp + ".attn", rng);
    layer.norm2 = add_param(lp + ".norm2", 1, cfg_.embed_dim, rng, -1.0);
    layer.mlp = add_mlp(lp + ".mlp", rng);
    layers.push_back(layer);
  }
  return layers;
}

template <class T>
Transformer<T>::Transformer(const ModelConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  Rng rng(cfg.init_seed);
  const int e = cfg.embed_dim, mel = cfg.mel_bins;

  token_embed_ = add_param("token_embed", cfg.vocab_size, e, rng, 1.0);
  note_layers_ = add_encoder("note_enc", rng);
  note_final_norm_ = add_param("note_enc.final_norm", 1, e, rng, -1.0);
  null_note_ = add_param("null_note", 1, e, rng, 0.02);

  if (cfg.use_context) {
    ctx_in_w_ = add_param("ctx_enc.in_proj.w", mel, e, rng, 1.0 / std::sqrt(mel));
    ctx_in_b_ = add_param("ctx_enc.in_proj.b", 1, e, rng, 0.0);
    ctx_layers_ = add_encoder("ctx_enc", rng);
    ctx_final_norm_ = add_param("ctx_enc.final_norm", 1, e, rng, -1.0);
    null_ctx_ = add_param("null_ctx", 1, e, rng, 0.02);
  }

  dec_in_w_ = add_identity_param("dec.in_proj.w", mel, e, rng, 0.3 / std::sqrt(mel));
  dec_in_b_ = add_param("dec.in_proj.b", 1, e, rng, 0.0);
  for (int l = 0; l < cfg.num_layers; ++l) {
    const std::string lp = "dec.l" + std::to_string(l);
    DecLayerIdx layer;
    layer.norm1 = add_param(lp + ".norm1", 1, e, rng, -1.0);
    if (cfg.mode == DecoderMode::kDiffusion) {
      layer.film1_ws = add_param(lp + ".film1.ws", e, e, rng, 0.0);
      layer.film1_wb = add_param(lp + ".film1.wb", e, e, rng, 0.0);
    } else {
      layer.film1_ws = layer.film1_wb = -1;
    }
    layer.self_attn = add_attn(lp + ".self_attn", rng);
    layer.norm2 = add_param(lp + ".norm2", 1, e, rng, -1.0);
    layer.cross_attn = add_attn(lp + ".cross_attn", rng);
    if (cfg.mode == DecoderMode::kDiffusion) {
      layer.film2_ws = add_param(lp + ".film2.ws", e, e, rng, 0.0);
      layer.film2_wb = add_param(lp + ".film2.wb", e, e, rng, 0.0);
    } else {
      layer.film2_ws = layer.film2_wb = -1;
    }
    layer.norm3 = add_param(lp + ".norm3", 1, e, rng, -1.0);
    layer.mlp = add_mlp(lp + ".mlp", rng);
    dec_layers_.push_back(layer);
  }
  dec_final_norm_ = add_param("dec.final_norm", 1, e, rng, -1.0);
  if (cfg.mode == DecoderMode::kDiffusion) {
    // Final time modulation lets the head scale the whole residual content
    // by the 1/sigma(t) factor that epsilon prediction needs at low noise.
    dec_final_film_ws_ = add_param("dec.final_film.ws", e, e, rng, 0.0);
    dec_final_film_wb_ = add_param("dec.final_film.wb", e, e, rng, 0.0);
  }
  dec_out_w_ = add_identity_param("dec.out_proj.w", e, mel, rng, 0.3 / std::sqrt(e));
  dec_out_b_ = add_param("dec.out_proj.b", 1, mel, rng, 0.0);

  if (cfg.mode == DecoderMode::kDiffusion) {
    time_w1_ = add_param("time_mlp.w1", e, cfg.mlp_dim, rng, 1.0 / std::sqrt(e));
    time_b1_ = add_param("time_mlp.b1", 1, cfg.mlp_dim, rng, 0.0);
    time_w2_ = add_param("time_mlp.w2", cfg.mlp_dim, e, rng, 1.0 / std::sqrt(cfg.mlp_dim));
    time_b2_ = add_param("time_mlp.b2", 1, e, rng, 0.0);
  } else {
    ar_start_ = add_param("ar_start_frame", 1, mel, rng, 0.0);
  }

  auto seed_for = [&](uint64_t stack) -> std::optional<uint64_t> {
    if (!cfg.decorrelate_positions) return std::nullopt;
    return mix_seed(0x9050e, stack);  // fixed per-stack streams
  };
  pe_notes_ = decorrelated_positions<T>(cfg.max_note_positions, e, seed_for(1));
  pe_ctx_ = decorrelated_positions<T>(cfg.context_positions, e, seed_for(2));
  pe_dec_ = decorrelated_positions<T>(cfg.decoder_positions, e, seed_for(3));
}

template <class T>
int Transformer<T>::param_index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("unknown parameter: " + name);
  return it->second;
}

template <class T>
int64_t Transformer<T>::param_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <class T>
const Mat<T>& Transformer<T>::ar_start_frame() const {
  if (ar_start_ < 0) throw ValueError("model has no autoregressive start frame");
  return params_[static_cast<size_t>(ar_start_)].value;
}

template <class T>
typename Transformer<T>::Var Transformer<T>::attention(Fwd& f, Var queries, Var memory,
                                                       const AttnIdx& idx,
                                                       const std::vector<uint8_t>& key_mask,
                                                       bool causal) const {
  auto& t = f.tape;
  const int h = cfg_.num_heads, d = cfg_.head_dim;
  Var q = t.matmul(queries, f.p(idx.wq));
  Var k = t.matmul(memory, f.p(idx.wk));
  Var v = t.matmul(memory, f.p(idx.wv));
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
  Var heads{};
  for (int i = 0; i < h; ++i) {
    Var qh = t.slice_cols(q, i * d, d);
    Var kh = t.slice_cols(k, i * d, d);
    Var vh = t.slice_cols(v, i * d, d);
    Var scores = t.scale(t.matmul(qh, kh, false, true), scale);
    Var probs = t.softmax_rows(scores, key_mask, causal);
    Var ctx = t.matmul(probs, vh);
    heads = heads.valid() ? t.concat_cols(heads, ctx) : ctx;
  }
  return t.matmul(heads, f.p(idx.wo));
}

template <class T>
typename Transformer<T>::Var Transformer<T>::mlp_block(Fwd& f, Var x, const MlpIdx& idx) const {
  auto& t = f.tape;
  Var gated = t.hadamard(t.gelu(t.matmul(x, f.p(idx.w0))), t.matmul(x, f.p(idx.w1)));
  return t.matmul(gated, f.p(idx.wo));
}

template <class T>
typename Transformer<T>::Var Transformer<T>::film(Fwd& f, Var x, Var t_embed, int ws,
                                                  int wb) const {
  auto& t = f.tape;
  // Zero-initialized projections make this the identity at init.
  Var scale = t.add_scalar(t.matmul(t_embed, f.p(ws)), static_cast<T>(1));
  Var shift = t.matmul(t_embed, f.p(wb));
  return t.add_row(t.mul_row(x, scale), shift);
}

template <class T>
typename Transformer<T>::Var Transformer<T>::encoder_stack(
    Fwd& f, Var x, const std::vector<uint8_t>& mask, const std::vector<EncLayerIdx>& layers,
    int final_norm) const {
  auto& t = f.tape;
  for (const EncLayerIdx& layer : layers) {
    Var normed = t.rmsnorm(x, f.p(layer.norm1));
    x = t.add(x, attention(f, normed, normed, layer.attn, mask, false));
    Var normed2 = t.rmsnorm(x, f.p(layer.norm2));
    x = t.add(x, mlp_block(f, normed2, layer.mlp));
  }
  return t.rmsnorm(x, f.p(final_norm));
}

template <class T>
typename Transformer<T>::Var Transformer<T>::encode_notes(Fwd& f,
                                                          std::span<const int> tokens) const {
  if (static_cast<int>(tokens.size()) > cfg_.max_note_positions)
    throw ValueError("encode_notes: sequence longer than max_note_positions");
  if (tokens.empty()) throw ValueError("encode_notes: empty token sequence");
  auto& t = f.tape;
  std::vector<int> ids(tokens.begin(), tokens.end());
  std::vector<uint8_t> mask(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i)
    mask[i] = tokens[i] != pad_token() ? 1 : 0;
  Var x = t.gather_rows(f.p(token_embed_), ids);
  Var pe = t.input(pe_notes_.topRows(static_cast<Eigen::Index>(tokens.size())));
  x = t.add(x, pe);
  return encoder_stack(f, x, mask, note_layers_, note_final_norm_);
}

template <class T>
typename Transformer<T>::Var Transformer<T>::encode_context(Fwd& f, const Mat<T>& context) const {
  if (!cfg_.use_context) throw ValueError("encode_context: model has no context encoder");
  if (context.rows() != cfg_.context_positions || context.cols() != cfg_.mel_bins)
    throw ValueError("encode_context: context must be context_positions x mel_bins");
  auto& t = f.tape;
  Var x = t.add_row(t.matmul(t.input(context), f.p(ctx_in_w_)), f.p(ctx_in_b_));
  x = t.add(x, t.input(pe_ctx_));
  return encoder_stack(f, x, {}, ctx_layers_, ctx_final_norm_);
}

template <class T>
typename Transformer<T>::CondVars Transformer<T>::make_cond_vars(Fwd& f,
                                                                 std::span<const int> tokens,
                                                                 const Mat<T>* context,
                                                                 bool is_null) const {
  auto& t = f.tape;
  CondVars out;
  const int note_len = static_cast<int>(tokens.size());
  if (cfg_.use_context && context == nullptr && !is_null)
    throw ValueError("make_cond_vars: model expects a context spectrogram");

  Var note_mem{};
  std::vector<uint8_t> note_mask;
  if (is_null) {
    note_mem = t.tile_rows(f.p(null_note_), std::max(note_len, 1));
    note_mask.assign(static_cast<size_t>(std::max(note_len, 1)), 1);
  } else {
    note_mem = encode_notes(f, tokens);
    note_mask.resize(tokens.size());
    for (size_t i = 0; i < tokens.size(); ++i)
      note_mask[i] = tokens[i] != pad_token() ? 1 : 0;
  }

  if (cfg_.use_context) {
    Var ctx_mem = is_null ? t.tile_rows(f.p(null_ctx_), cfg_.context_positions)
                          : encode_context(f, *context);
    out.memory = t.concat_rows(note_mem, ctx_mem);
    out.mask = note_mask;
    out.mask.insert(out.mask.end(), static_cast<size_t>(cfg_.context_positions), 1);
  } else {
    out.memory = note_mem;
    out.mask = note_mask;
  }
  return out;
}

template <class T>
typename Transformer<T>::Var Transformer<T>::time_embedding(Fwd& f, double t) const {
  if (cfg_.mode != DecoderMode::kDiffusion)
    throw ValueError("time_embedding: not a diffusion model");
  auto& tp = f.tape;
  Var x = tp.input(sinusoid_features<T>(t * 200.0, cfg_.embed_dim));
  Var h = tp.gelu(tp.add_row(tp.matmul(x, f.p(time_w1_)), f.p(time_b1_)));
  return tp.add_row(tp.matmul(h, f.p(time_w2_)), f.p(time_b2_));
}

template <class T>
typename Transformer<T>::Var Transformer<T>::diffusion_decode(Fwd& f, const Mat<T>& x_t, double t,
                                                              const CondVars& cond) const {
  if (cfg_.mode != DecoderMode::kDiffusion)
    throw ValueError("diffusion_decode: not a diffusion model");
  if (x_t.rows() != cfg_.decoder_positions || x_t.cols() != cfg_.mel_bins)
    throw ValueError("diffusion_decode: input must be decoder_positions x mel_bins");
  auto& tp = f.tape;
  Var t_emb = time_embedding(f, t);
  Var x = tp.add_row(tp.matmul(tp.input(x_t), f.p(dec_in_w_)), f.p(dec_in_b_));
  x = tp.add(x, tp.input(pe_dec_));
  for (const DecLayerIdx& layer : dec_layers_) {
    Var normed = film(f, tp.rmsnorm(x, f.p(layer.norm1)), t_emb, layer.film1_ws, layer.film1_wb);
    x = tp.add(x, attention(f, normed, normed, layer.self_attn, {}, false));
    Var normed2 = tp.rmsnorm(x, f.p(layer.norm2));
    Var cross = attention(f, normed2, cond.memory, layer.cross_attn, cond.mask, false);
    x = tp.add(x, film(f, cross, t_emb, layer.film2_ws, layer.film2_wb));
    Var normed3 = tp.rmsnorm(x, f.p(layer.norm3));
    x = tp.add(x, mlp_block(f, normed3, layer.mlp));
  }
  x = film(f, tp.rmsnorm(x, f.p(dec_final_norm_)), t_emb, dec_final_film_ws_,
           dec_final_film_wb_);
  return tp.add_row(tp.matmul(x, f.p(dec_out_w_)), f.p(dec_out_b_));
}

template <class T>
typename Transformer<T>::Var Transformer<T>::ar_decode(Fwd& f, const Mat<T>& target_frames,
                                                       const CondVars& cond) const {
  if (cfg_.mode != DecoderMode::kAutoregressive)
    throw ValueError("ar_decode: not an autoregressive model");
  if (target_frames.cols() != cfg_.mel_bins)
    throw ValueError("ar_decode: wrong mel bin count");
  const auto rows = target_frames.rows();
  if (rows < 1 || rows > cfg_.decoder_positions)
    throw ValueError("ar_decode: bad frame count");
  auto& tp = f.tape;
  // Shift right: input i is frame i-1, with the learned start frame first.
  Mat<T> shifted(rows, cfg_.mel_bins);
  shifted.row(0) = params_[static_cast<size_t>(ar_start_)].value.row(0);
  if (rows > 1) shifted.bottomRows(rows - 1) = target_frames.topRows(rows - 1);

  Var x = tp.add_row(tp.matmul(tp.input(shifted), f.p(dec_in_w_)), f.p(dec_in_b_));
  x = tp.add(x, tp.input(pe_dec_.topRows(rows)));
  for (const DecLayerIdx& layer : dec_layers_) {
    Var normed = tp.rmsnorm(x, f.p(layer.norm1));
    x = tp.add(x, attention(f, normed, normed, layer.self_attn, {}, true));
    Var normed2 = tp.rmsnorm(x, f.p(layer.norm2));
    x = tp.add(x, attention(f, normed2, cond.memory, layer.cross_attn, cond.mask, false));
    Var normed3 = tp.rmsnorm(x, f.p(layer.norm3));
    x = tp.add(x, mlp_block(f, normed3, layer.mlp));
  }
  x = tp.rmsnorm(x, f.p(dec_final_norm_));
  return tp.add_row(tp.matmul(x, f.p(dec_out_w_)), f.p(dec_out_b_));
}

template <class T>
ConditioningBundle Transformer<T>::make_conditioning(std::span<const int> tokens,
                                                     const MatF* context, bool is_null) const
  requires std::is_same_v<T, float>
{
  Tape<float> tape;
  Fwd f(tape, *this);
  ConditioningBundle bundle;
  bundle.is_null = is_null;
  if (is_null) {
    const int len = std::max(static_cast<int>(tokens.size()), 1);
    bundle.note_memory =
        params_[static_cast<size_t>(null_note_)].value.row(0).replicate(len, 1);
    bundle.note_mask.assign(static_cast<size_t>(len), 1);
    if (cfg_.use_context)
      bundle.context_memory =
          params_[static_cast<size_t>(null_ctx_)].value.row(0).replicate(cfg_.context_positions, 1);
    return bundle;
  }
  bundle.note_memory = tape.value(encode_notes(f, tokens));
  bundle.note_mask.resize(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i)
    bundle.note_mask[i] = tokens[i] != pad_token() ? 1 : 0;
  if (cfg_.use_context) {
    if (context == nullptr) throw ValueError("make_conditioning: context required");
    bundle.context_memory = tape.value(encode_context(f, *context));
  }
  return bundle;
}

template <class T>
MatF Transformer<T>::diffusion_denoise(const MatF& x_t, double t,
                                       const ConditioningBundle& bundle) const
  requires std::is_same_v<T, float>
{
  Tape<float> tape;
  Fwd f(tape, *this);
  CondVars cond;
  MatF memory = bundle.note_memory;
  std::vector<uint8_t> mask = bundle.note_mask;
  if (bundle.context_memory) {
    MatF merged(memory.rows() + bundle.context_memory->rows(), memory.cols());
    merged.topRows(memory.rows()) = memory;
    merged.bottomRows(bundle.context_memory->rows()) = *bundle.context_memory;
    memory = std::move(merged);
    mask.insert(mask.end(), static_cast<size_t>(bundle.context_memory->rows()), 1);
  }
  cond.memory = tape.input(memory);
  cond.mask = std::move(mask);
  return tape.value(diffusion_decode(f, x_t, t, cond));
}

template <class T>
MatF Transformer<T>::ar_predict(const MatF& teacher_frames,
                                const ConditioningBundle& bundle) const
  requires std::is_same_v<T, float>
{
  Tape<float> tape;
  Fwd f(tape, *this);
  CondVars cond;
  MatF memory = bundle.note_memory;
  std::vector<uint8_t> mask = bundle.note_mask;
  if (bundle.context_memory) {
    MatF merged(memory.rows() + bundle.context_memory->rows(), memory.cols());
    merged.topRows(memory.rows()) = memory;
    merged.bottomRows(bundle.context_memory->rows()) = *bundle.context_memory;
    memory = std::move(merged);
    mask.insert(mask.end(), static_cast<size_t>(bundle.context_memory->rows()), 1);
  }
  cond.memory = tape.input(memory);
  cond.mask = std::move(mask);
  return tape.value(ar_decode(f, teacher_frames, cond));
}

template <class T>
MatF Transformer<T>::ar_sample(const ConditioningBundle& bundle, Rng& rng,
                               double dither_stddev) const
  requires std::is_same_v<T, float>
{
  MatF frames = MatF::Zero(cfg_.decoder_positions, cfg_.mel_bins);
  for (int i = 0; i < cfg_.decoder_positions; ++i) {
    // Teacher input for rows <= i is what we've emitted so far; the decode is
    // causal so rows > i never influence row i.
    MatF partial = frames.topRows(i + 1);
    MatF preds = ar_predict(partial, bundle);
    MatF frame = preds.row(i);
    for (Eigen::Index c = 0; c < frame.cols(); ++c)
      frame(0, c) += static_cast<float>(dither_stddev * rng.normal());
    frames.row(i) = frame.row(0);
  }
  return frames;
}

}  // namespace melsynth
