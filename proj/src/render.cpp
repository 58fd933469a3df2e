#include "melsynth/render.hpp"

#include "melsynth/diffusion.hpp"

#include <chrono>
#include <cmath>

namespace melsynth {

std::vector<double> boundary_discontinuity(const MatF& mel, std::span<const int> boundary_frames,
                                           int window_frames) {
  if (window_frames < 1) throw ValueError("boundary_discontinuity: window must be >= 1");
  std::vector<double> stats;
  const int frames = static_cast<int>(mel.rows());
  for (int b : boundary_frames) {
    if (b < 0 || b > frames) throw ValueError("boundary_discontinuity: boundary out of range");
    if (b - window_frames < 0 || b + window_frames > frames) continue;  // edge, skipped
    const auto before = mel.middleRows(b - window_frames, window_frames).cast<double>();
    const auto after = mel.middleRows(b, window_frames).cast<double>();
    const double rms_before = std::sqrt(before.array().square().mean());
    const double rms_after = std::sqrt(after.array().square().mean());
    stats.push_back(std::abs(rms_after - rms_before));
  }
  return stats;
}

double mean_boundary_discontinuity(const MatF& mel, std::span<const int> boundary_frames,
                                   int window_frames) {
  auto stats = boundary_discontinuity(mel, boundary_frames, window_frames);
  if (stats.empty()) return 0.0;
  double sum = 0.0;
  for (double s : stats) sum += s;
  return sum / static_cast<double>(stats.size());
}

double rt_factor(double audio_duration_s, double wall_time_s) {
  if (wall_time_s <= 0.0) throw ValueError("rt_factor: wall time must be positive");
  return audio_duration_s / wall_time_s;
}

RenderedTrack render_track(std::span<const TimedNote> notes, const Checkpoint& ckpt,
                           const RenderOptions& opts) {
  const Vocabulary vocab;
  if (ckpt.vocab_hash != vocab.layout_hash())
    throw VersionError("checkpoint vocabulary hash does not match the current vocabulary");
  TransformerF model = ckpt.build_model();
  const ModelConfig& mcfg = model.config();
  const SpecConfig& scfg = ckpt.spec_config;
  const InstrumentMap& imap = InstrumentMap::builtin();

  RenderedTrack out;
  const double seg_dur = mcfg.decoder_positions * scfg.frame_seconds();
  const int num_segments = std::max(1, derive_window_count(notes, seg_dur));
  out.num_segments = num_segments;

  auto windows = encode_windows(notes, num_segments, vocab, imap, seg_dur, &out.warnings);

  const int frames = mcfg.decoder_positions;
  out.model_range_mel.resize(static_cast<Eigen::Index>(num_segments) * frames, mcfg.mel_bins);

  MatF context = MatF::Zero(frames, mcfg.mel_bins);
  const auto t_start = std::chrono::steady_clock::now();
  for (int k = 0; k < num_segments; ++k) {
    const auto seg_start = std::chrono::steady_clock::now();
    TokenSeq tokens = windows[static_cast<size_t>(k)].second;
    if (static_cast<int>(tokens.size()) > mcfg.max_note_positions) {
      warn(&out.warnings, "segment " + std::to_string(k) + ": token overflow, truncating");
      tokens.resize(static_cast<size_t>(mcfg.max_note_positions - 1));
      tokens.push_back(vocab.eos());
    }
    // Pad to a multiple of 8 so short segments stay cheap.
    const int padded = std::min(
        ((static_cast<int>(tokens.size()) + 7) / 8) * 8, mcfg.max_note_positions);
    tokens.resize(static_cast<size_t>(padded), model.pad_token());

    MatF segment;
    if (mcfg.mode == DecoderMode::kDiffusion) {
      ConditioningBundle cond =
          model.make_conditioning(tokens, mcfg.use_context ? &context : nullptr, false);
      ConditioningBundle null_cond =
          model.make_conditioning(tokens, mcfg.use_context ? &context : nullptr, true);
      DenoiserFn denoiser = [&](const MatF& x_t, double t, bool null_c) {
        return model.diffusion_denoise(x_t, t, null_c ? null_cond : cond);
      };
      SamplerOptions sopts;
      sopts.num_steps = opts.num_steps;
      sopts.guidance_weight = opts.guidance_weight;
      sopts.weight_plus_one = opts.guidance_plus_one;
      sopts.seed = mix_seed(opts.seed, static_cast<uint64_t>(k));
      segment = reverse_sample(denoiser, frames, mcfg.mel_bins, sopts);
    } else {
      ConditioningBundle cond =
          model.make_conditioning(tokens, mcfg.use_context ? &context : nullptr, false);
      Rng rng(mix_seed(opts.seed, static_cast<uint64_t>(k)));
      // Dither variance 0.2 is in log-magnitude units; convert its stddev to
      // model range.
      const double dither_std =
          std::sqrt(0.2) * 2.0 / (static_cast<double>(ckpt.scale_hi) - ckpt.scale_lo);
      segment = model.ar_sample(cond, rng, dither_std);
      segment = segment.cwiseMax(-1.0f).cwiseMin(1.0f);
    }
    out.model_range_mel.middleRows(static_cast<Eigen::Index>(k) * frames, frames) = segment;
    if (opts.use_context) context = segment;  // already clamped to [-1, 1]
    out.segment_wall_s.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - seg_start).count());
  }

  out.mel = unscale_from_model_range(out.model_range_mel, ckpt.scale_lo, ckpt.scale_hi);
  out.audio = invert_mel(out.mel, scfg, opts.vocoder_iters);
  out.total_wall_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  std::vector<int> boundaries;
  for (int k = 1; k < num_segments; ++k) boundaries.push_back(k * frames);
  out.boundary_stats =
      boundary_discontinuity(out.model_range_mel, boundaries, opts.boundary_window_frames);
  out.mean_boundary_stat = 0.0;
  for (double s : out.boundary_stats) out.mean_boundary_stat += s;
  if (!out.boundary_stats.empty())
    out.mean_boundary_stat /= static_cast<double>(out.boundary_stats.size());

  const double audio_s = static_cast<double>(out.audio.size()) / scfg.sample_rate;
  out.rt_factor = rt_factor(audio_s, out.total_wall_s);
  return out;
}

RenderedTrack render_midi_file(const std::string& midi_path, const Checkpoint& ckpt,
                               const RenderOptions& opts) {
  Warnings warnings;
  auto notes = midi_file_to_notes(midi_path, &warnings);
  RenderedTrack out = render_track(notes, ckpt, opts);
  out.warnings.insert(out.warnings.begin(), warnings.begin(), warnings.end());
  return out;
}

}  // namespace melsynth
