#pragma once

#include "melsynth/common.hpp"
#include "melsynth/note_events.hpp"

#include <vector>

namespace melsynth {

// Per-class additive timbre: harmonics with power-law rolloff, ADSR envelope
// and a small noise component. Drums are synthesized as filtered noise
// bursts with a pitched body.
struct ClassTimbre {
  int harmonics = 8;
  double rolloff = 1.0;      // amplitude of harmonic h is 1 / h^rolloff
  double odd_only = 0.0;     // 1.0 keeps only odd harmonics (clarinet-like)
  double attack_s = 0.01;
  double decay_s = 0.08;
  double sustain = 0.7;      // sustain level relative to peak
  double release_s = 0.05;
  double noise_level = 0.0;  // breath/bow noise mixed into the tone
  double vibrato_hz = 0.0;
  double vibrato_cents = 0.0;
};

struct OracleSynthConfig {
  int sample_rate = 16000;
  uint64_t seed = 0;
  double note_gain = 0.2;
  double normalize_peak = 0.5;
  std::vector<ClassTimbre> timbres;  // indexed by instrument class, incl. drums

  static OracleSynthConfig defaults();
};

// Deterministic audio for (notes, config, seed). The mixed track is
// peak-normalized down to cfg.normalize_peak when it would exceed it;
// quieter mixes stay untouched so disjoint notes sum linearly.
// duration_s <= 0 derives the length from the notes (max offset plus release).
std::vector<float> synthesize_oracle(std::span<const TimedNote> notes,
                                     const OracleSynthConfig& cfg, double duration_s = -1.0);

}  // namespace melsynth
