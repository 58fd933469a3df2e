#include "melsynth/oracle_synth.hpp"

#include "melsynth/instrument_map.hpp"
#include "melsynth/rng.hpp"

#include <algorithm>
#include <cmath>

namespace melsynth {

OracleSynthConfig OracleSynthConfig::defaults() {
  OracleSynthConfig cfg;
  cfg.timbres.assign(kNumInstrumentClasses + 1, ClassTimbre{});
  auto set = [&](int cls, ClassTimbre t) { cfg.timbres[static_cast<size_t>(cls)] = t; };
  // Keyboard family: bright attack, decaying sustain.
  set(0, {12, 1.3, 0.0, 0.004, 0.5, 0.25, 0.08, 0.0, 0.0, 0.0});
  set(1, {8, 1.6, 0.0, 0.004, 0.4, 0.3, 0.08, 0.0, 0.0, 0.0});
  set(2, {5, 2.2, 0.0, 0.002, 0.3, 0.15, 0.1, 0.0, 0.0, 0.0});
  set(3, {9, 0.8, 0.0, 0.03, 0.05, 0.95, 0.06, 0.0, 0.0, 0.0});
  // Guitars and basses: plucked envelopes.
  set(4, {10, 1.4, 0.0, 0.003, 0.5, 0.2, 0.06, 0.01, 0.0, 0.0});
  set(5, {8, 1.2, 0.0, 0.003, 0.45, 0.25, 0.06, 0.0, 0.0, 0.0});
  set(6, {14, 0.6, 0.0, 0.003, 0.3, 0.5, 0.06, 0.03, 0.0, 0.0});
  set(7, {6, 1.5, 0.0, 0.005, 0.4, 0.3, 0.08, 0.0, 0.0, 0.0});
  set(8, {6, 1.2, 0.0, 0.004, 0.35, 0.35, 0.08, 0.0, 0.0, 0.0});
  set(9, {8, 0.9, 0.0, 0.004, 0.25, 0.5, 0.06, 0.0, 0.0, 0.0});
  // Bowed strings: slow attack, vibrato, bow noise.
  for (int cls : {10, 11, 12, 13})
    set(cls, {10, 1.0, 0.0, 0.06, 0.1, 0.85, 0.1, 0.02, 5.5, 12.0});
  set(14, {8, 1.3, 0.0, 0.004, 0.3, 0.2, 0.05, 0.005, 0.0, 0.0});
  set(15, {7, 1.8, 0.0, 0.003, 0.6, 0.2, 0.15, 0.0, 0.0, 0.0});
  set(16, {4, 1.5, 0.0, 0.002, 0.4, 0.1, 0.2, 0.05, 0.0, 0.0});
  set(17, {9, 1.1, 0.0, 0.08, 0.1, 0.9, 0.15, 0.02, 5.0, 8.0});
  set(18, {7, 0.9, 0.0, 0.1, 0.1, 0.9, 0.2, 0.01, 0.0, 0.0});
  set(19, {6, 1.4, 0.0, 0.09, 0.1, 0.9, 0.15, 0.03, 5.0, 10.0});
  set(20, {12, 0.8, 0.0, 0.005, 0.3, 0.4, 0.2, 0.05, 0.0, 0.0});
  // Brass: buzzy, medium attack.
  for (int cls : {21, 22, 23, 24, 25, 26})
    set(cls, {12, 0.7, 0.0, 0.04, 0.08, 0.85, 0.08, 0.015, 4.5, 6.0});
  // Reeds and pipes.
  set(27, {9, 0.9, 0.3, 0.04, 0.08, 0.85, 0.08, 0.02, 5.0, 8.0});
  set(28, {8, 1.0, 0.2, 0.04, 0.08, 0.85, 0.08, 0.02, 5.0, 6.0});
  set(29, {7, 1.1, 0.3, 0.05, 0.08, 0.85, 0.08, 0.02, 4.5, 6.0});
  set(30, {9, 1.0, 1.0, 0.04, 0.08, 0.85, 0.08, 0.015, 4.5, 5.0});
  set(31, {2, 2.0, 0.0, 0.05, 0.05, 0.9, 0.08, 0.03, 5.0, 6.0});
  // Synths.
  set(32, {15, 0.5, 0.0, 0.005, 0.05, 0.95, 0.04, 0.0, 0.0, 0.0});
  set(33, {6, 1.0, 0.0, 0.25, 0.1, 0.95, 0.3, 0.01, 0.0, 0.0});
  // Drums handled separately; the row keeps indexing total.
  set(kDrumClass, {1, 1.0, 0.0, 0.001, 0.05, 0.0, 0.05, 1.0, 0.0, 0.0});
  return cfg;
}

namespace {

double midi_hz(double pitch) { return 440.0 * std::pow(2.0, (pitch - 69.0) / 12.0); }

double adsr(double t, double dur, const ClassTimbre& tb) {
  if (t < 0.0) return 0.0;
  if (t < tb.attack_s) return t / tb.attack_s;
  const double after_attack = t - tb.attack_s;
  double level;
  if (after_attack < tb.decay_s)
    level = 1.0 + (tb.sustain - 1.0) * (after_attack / tb.decay_s);
  else
    level = tb.sustain;
  if (t > dur) {
    const double rel = (t - dur) / tb.release_s;
    if (rel >= 1.0) return 0.0;
    level *= 1.0 - rel;
  }
  return level;
}

void render_tone(std::vector<float>& out, const TimedNote& note, const ClassTimbre& tb,
                 const OracleSynthConfig& cfg, Rng& note_rng) {
  const double sr = cfg.sample_rate;
  const double f0 = midi_hz(note.pitch);
  const double dur = note.offset_s.value_or(note.onset_s + 0.25) - note.onset_s;
  const auto start = static_cast<int64_t>(std::floor(note.onset_s * sr));
  const auto total = static_cast<int64_t>(std::ceil((dur + tb.release_s) * sr)) + 1;

  // Precompute harmonic amplitudes below Nyquist.
  std::vector<double> amps;
  for (int h = 1; h <= tb.harmonics; ++h) {
    if (f0 * h >= sr / 2.0) break;
    double a = 1.0 / std::pow(h, tb.rolloff);
    if (tb.odd_only > 0.0 && h % 2 == 0) a *= 1.0 - tb.odd_only;
    amps.push_back(a);
  }
  if (amps.empty()) amps.push_back(1.0);
  double norm = 0.0;
  for (double a : amps) norm += a;

  const double phase0 = note_rng.uniform(0.0, 2.0 * M_PI);
  double noise_state = 0.0;
  for (int64_t i = 0; i < total; ++i) {
    const int64_t idx = start + i;
    if (idx < 0 || idx >= static_cast<int64_t>(out.size())) continue;
    const double t = static_cast<double>(i) / sr;
    const double env = adsr(t, dur, tb);
    if (env <= 0.0) continue;
    double vib = 1.0;
    if (tb.vibrato_hz > 0.0)
      vib = std::pow(2.0, tb.vibrato_cents / 1200.0 * std::sin(2.0 * M_PI * tb.vibrato_hz * t));
    double s = 0.0;
    for (size_t h = 0; h < amps.size(); ++h)
      s += amps[h] * std::sin(2.0 * M_PI * f0 * vib * (h + 1) * t + phase0 * (h + 1));
    s /= norm;
    if (tb.noise_level > 0.0) {
      // One-pole lowpassed noise so it sits under the tone.
      noise_state = 0.9 * noise_state + 0.1 * note_rng.normal();
      s += tb.noise_level * noise_state * 10.0;
    }
    out[static_cast<size_t>(idx)] += static_cast<float>(cfg.note_gain * env * s);
  }
}

void render_drum(std::vector<float>& out, const TimedNote& note, const OracleSynthConfig& cfg,
                 Rng& note_rng) {
  const double sr = cfg.sample_rate;
  const auto start = static_cast<int64_t>(std::floor(note.onset_s * sr));
  // Pitch shapes the hit: low numbers decay slower and carry a deeper body.
  const double pitch01 = std::clamp(note.pitch / 127.0, 0.0, 1.0);
  const double decay_s = 0.25 - 0.2 * pitch01;
  const double body_hz = 50.0 + 350.0 * pitch01;
  const auto total = static_cast<int64_t>(std::ceil(decay_s * sr));
  double lp = 0.0;
  const double lp_coeff = 0.2 + 0.75 * pitch01;
  for (int64_t i = 0; i < total; ++i) {
    const int64_t idx = start + i;
    if (idx < 0 || idx >= static_cast<int64_t>(out.size())) continue;
    const double t = static_cast<double>(i) / sr;
    const double env = std::exp(-t / (decay_s / 4.0));
    lp = (1.0 - lp_coeff) * lp + lp_coeff * note_rng.normal();
    double s = 0.6 * lp + 0.5 * std::sin(2.0 * M_PI * body_hz * t) * std::exp(-t / 0.04);
    out[static_cast<size_t>(idx)] += static_cast<float>(cfg.note_gain * env * s);
  }
}

}  // namespace

std::vector<float> synthesize_oracle(std::span<const TimedNote> notes,
                                     const OracleSynthConfig& cfg, double duration_s) {
  const OracleSynthConfig& c = cfg;
  if (c.timbres.size() < kNumInstrumentClasses + 1)
    throw ValueError("synthesize_oracle: timbre table too small");
  double end = duration_s;
  if (end <= 0.0) {
    end = 0.0;
    for (const TimedNote& n : notes) {
      const int cls = InstrumentMap::builtin().class_of(n.program, n.is_drum);
      const double rel = c.timbres[static_cast<size_t>(cls)].release_s;
      end = std::max(end, n.offset_s.value_or(n.onset_s + 0.3) + rel);
    }
  }
  auto len = static_cast<size_t>(std::llround(end * c.sample_rate));
  std::vector<float> out(len, 0.0f);
  if (notes.empty() || len == 0) return out;

  Rng base(c.seed);
  const InstrumentMap& imap = InstrumentMap::builtin();
  for (size_t i = 0; i < notes.size(); ++i) {
    const TimedNote& n = notes[i];
    // Per-note stream keyed by note identity, not list position, so the
    // same note renders identically regardless of its neighbors.
    const uint64_t key = static_cast<uint64_t>(time_to_tick(n.onset_s)) * 1000003ull +
                         static_cast<uint64_t>(n.pitch) * 131ull +
                         static_cast<uint64_t>(n.program) * 17ull + (n.is_drum ? 7ull : 0ull);
    Rng note_rng = base.child(key);
    const int cls = imap.class_of(n.program, n.is_drum);
    if (n.is_drum)
      render_drum(out, n, c, note_rng);
    else
      render_tone(out, n, c.timbres[static_cast<size_t>(cls)], c, note_rng);
  }

  // Peak-limit to normalize_peak. Tracks already under the ceiling are left
  // untouched, so disjoint notes mix linearly.
  float peak = 0.0f;
  for (float s : out) peak = std::max(peak, std::abs(s));
  if (peak > c.normalize_peak) {
    const float g = static_cast<float>(c.normalize_peak) / peak;
    for (float& s : out) s *= g;
  }
  return out;
}

}  // namespace melsynth
