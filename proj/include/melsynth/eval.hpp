#pragma once

#include "melsynth/checkpoint.hpp"
#include "melsynth/dataset.hpp"
#include "melsynth/note_events.hpp"
#include "melsynth/render.hpp"
#include "melsynth/spectrogram.hpp"

#include <memory>
#include <string>

namespace melsynth {

// Audio -> (frames x D) embedding. Implementations must be deterministic
// with a fixed D.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual double frame_rate() const = 0;
  virtual MatF embed(std::span<const float> audio) const = 0;
};

// Reference embedder: one embedding per second of audio, stacking per-bin
// mel statistics over 50-frame blocks (mean, std, mean |delta|) -> D = 384.
class MelStatsEmbedder : public Embedder {
 public:
  explicit MelStatsEmbedder(const SpecConfig& cfg = {});
  std::string name() const override { return "melstats"; }
  int dim() const override;
  double frame_rate() const override;
  MatF embed(std::span<const float> audio) const override;

 private:
  SpecConfig cfg_;
  int block_frames_;
};

std::unique_ptr<Embedder> make_embedder(const std::string& name, const SpecConfig& cfg = {});

// Mean over frames of the per-frame Euclidean (Frobenius) norm of the
// embedding difference. Frame counts are truncated to the shorter input
// with a warning.
double recon_distance(const MatF& e_ref, const MatF& e_test, Warnings* warnings = nullptr);

// Frechet distance ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)) over pooled
// frame embeddings. Covariances get +reg*I before the matrix square root;
// rank-deficient inputs are flagged through `warnings`.
double fad(const MatF& embeds_ref, const MatF& embeds_test, double reg = 1e-6,
           Warnings* warnings = nullptr);

// --- transcription F1 -------------------------------------------------------

struct F1Result {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int matches = 0;
};

struct F1Options {
  double onset_tolerance_s = 0.05;
  double offset_min_tolerance_s = 0.05;
  double offset_ratio = 0.2;  // offset tolerance = max(ratio * ref_dur, min)
  bool optimal_matching = false;  // maximum bipartite instead of greedy
};

// A pitched note matches when onset is within the tolerance, offset within
// max(0.2 * ref_duration, 50 ms), and pitch + program are exact. Drums match
// on onset and drum identity only.
F1Result note_f1(std::span<const TimedNote> ref, std::span<const TimedNote> est,
                 const F1Options& opts = {});

// --- dataset-level evaluation ------------------------------------------------

// External command transcriber: invoked as `<command> <wav> <out_json>`,
// must write the documented note-list JSON schema.
struct ExternalTranscriber {
  std::string command;
  std::vector<TimedNote> transcribe(const std::string& wav_path,
                                    const std::string& scratch_dir) const;
};

struct EvalOptions {
  RenderOptions render;
  std::string embedder = "melstats";
  std::optional<std::string> transcriber_command;
  double max_audio_s = 600.0;  // metrics use the first 10 minutes per example
  std::string scratch_dir = "/tmp";
};

struct ExampleMetrics {
  int track_id = 0;
  double recon = 0.0;
  double rt = 0.0;
  std::optional<F1Result> f1;
};

struct MetricsReport {
  int schema_version = 1;
  std::string embedder;
  std::vector<ExampleMetrics> per_example;
  double recon = 0.0;     // mean per-example reconstruction distance
  double fad = 0.0;       // pooled over the whole set
  std::optional<double> transcription_f1;
  std::optional<double> precision;
  std::optional<double> recall;
  double rt = 0.0;        // mean RT factor
  std::string config_echo;
  Warnings warnings;

  std::string to_json() const;
};

// Renders every dataset track with the checkpoint and scores it against the
// dataset's reference audio/notes.
MetricsReport evaluate(const Checkpoint& ckpt, const Dataset& dataset, const Embedder& embedder,
                       const EvalOptions& opts);

// Pairs of (reference audio, test audio [, notes]) scored directly; the
// checkpoint-level evaluate() delegates here after rendering.
struct EvalPair {
  int track_id = 0;
  std::span<const float> ref_audio;
  std::span<const float> test_audio;
  double render_wall_s = 0.0;
  const std::vector<TimedNote>* ref_notes = nullptr;
  const std::vector<TimedNote>* est_notes = nullptr;
};

MetricsReport evaluate_pairs(std::span<const EvalPair> pairs, const Embedder& embedder,
                             double max_audio_s = 600.0);

std::span<const float> truncate_audio(std::span<const float> audio, double max_s,
                                      int sample_rate);

}  // namespace melsynth
