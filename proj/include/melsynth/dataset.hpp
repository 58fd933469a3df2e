#pragma once

#include "melsynth/common.hpp"
#include "melsynth/note_events.hpp"
#include "melsynth/oracle_synth.hpp"
#include "melsynth/rng.hpp"
#include "melsynth/spectrogram.hpp"

#include <string>
#include <vector>

namespace melsynth {

// One training example. target/context are in model range [-1, 1]; the
// context of a track-initial segment is all zeros.
struct SegmentExample {
  TokenSeq tokens;
  MatF target;
  MatF context;
  int track_id = 0;
  int segment_index = 0;
};

struct DatasetConfig {
  int n_tracks = 2;
  int segments_per_track = 2;
  uint64_t seed = 17;
  double segment_duration_s = 5.12;
  int min_instruments = 1;
  int max_instruments = 2;
  double notes_per_second = 1.5;
  double min_note_s = 0.12;
  double max_note_s = 2.0;
  double drum_probability = 0.25;
  // Percentiles of the raw log-mel corpus used as scaling constants.
  double lo_percentile = 0.01;
  double hi_percentile = 0.999;
  OracleSynthConfig synth = OracleSynthConfig::defaults();
  SpecConfig spec;
};

struct TrackData {
  std::vector<TimedNote> notes;
  std::vector<float> audio;           // zero-padded to whole segments
  std::vector<MelSpec> segment_mels;  // raw log-mel, one per segment
  std::vector<TokenSeq> segment_tokens;
};

struct Dataset {
  DatasetConfig config;
  std::vector<TrackData> tracks;
  std::vector<SegmentExample> examples;
  float scale_lo = 0.0f;
  float scale_hi = 0.0f;
  uint64_t content_hash = 0;
};

// Random multi-instrument tracks rendered by the oracle synth and cut into
// (tokens, target, context) triples. Deterministic given cfg.seed.
Dataset make_dataset(const DatasetConfig& cfg);

// Notes for one random track; exposed for tests and the overfit experiment.
std::vector<TimedNote> make_random_track_notes(const DatasetConfig& cfg, Rng& rng);

// Builds a dataset around caller-provided note tracks (overfit experiments
// use a handcrafted track).
Dataset make_dataset_from_notes(const DatasetConfig& cfg,
                                const std::vector<std::vector<TimedNote>>& tracks);

// --- disk format -------------------------------------------------------
// <dir>/manifest.json                   seed, config echo, scaling, hash
// <dir>/tracks/t0000/notes.json         documented note-list schema
// <dir>/tracks/t0000/audio.wav          oracle audio, 16 kHz mono PCM
// <dir>/tracks/t0000/seg000.tokens.txt  one line of space-separated ints
// <dir>/tracks/t0000/seg000.mel         raw log-mel dump (unscaled)

void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

std::string notes_to_json(std::span<const TimedNote> notes);
std::vector<TimedNote> notes_from_json(const std::string& text);
std::vector<TimedNote> load_notes_json(const std::string& path);

DatasetConfig dataset_config_from_kv(const class KvConfig& kv);

}  // namespace melsynth
