#pragma once

#include "melsynth/checkpoint.hpp"
#include "melsynth/note_events.hpp"
#include "melsynth/spectrogram.hpp"

#include <string>
#include <vector>

namespace melsynth {

struct RenderOptions {
  double guidance_weight = 2.0;
  bool guidance_plus_one = false;
  int num_steps = 1000;
  uint64_t seed = 0;
  bool use_context = true;  // chain generated context across segments
  int vocoder_iters = 64;
  int boundary_window_frames = 4;
};

struct RenderedTrack {
  MatF model_range_mel;   // (segments * decoder_positions) x mel_bins, in [-1, 1]
  MelSpec mel;            // unscaled log-mel
  std::vector<float> audio;
  std::vector<double> segment_wall_s;
  double total_wall_s = 0.0;
  std::vector<double> boundary_stats;
  double mean_boundary_stat = 0.0;
  double rt_factor = 0.0;
  int num_segments = 0;
  Warnings warnings;
};

// Renders every segment with reverse diffusion (or autoregressive sampling),
// feeding segment k the spectrogram generated for segment k-1 when context
// chaining is on (segment 0 gets a zero context; with use_context=false every
// segment gets the zero context and segments are independent given tokens).
// Per-segment sampler seeds derive from (opts.seed, segment index).
RenderedTrack render_track(std::span<const TimedNote> notes, const Checkpoint& ckpt,
                           const RenderOptions& opts);

RenderedTrack render_midi_file(const std::string& midi_path, const Checkpoint& ckpt,
                               const RenderOptions& opts);

// |RMS(window after boundary) - RMS(window before)| per boundary, RMS taken
// over all frequency bins and window frames. Boundaries too close to the
// edges are skipped.
std::vector<double> boundary_discontinuity(const MatF& mel, std::span<const int> boundary_frames,
                                           int window_frames = 4);
double mean_boundary_discontinuity(const MatF& mel, std::span<const int> boundary_frames,
                                   int window_frames = 4);

// Audio seconds generated per wall-clock second; > 1 is faster than realtime.
double rt_factor(double audio_duration_s, double wall_time_s);

}  // namespace melsynth
