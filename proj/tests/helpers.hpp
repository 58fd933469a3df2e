#pragma once

#include "melsynth/common.hpp"
#include "melsynth/note_events.hpp"
#include "melsynth/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

namespace melsynth::testing {

// Minimal SMF writer for constructing parser fixtures.
class MidiBuilder {
 public:
  explicit MidiBuilder(int ticks_per_qn = 480) : tpq_(ticks_per_qn) {}

  MidiBuilder& tempo(int64_t tick, uint32_t us_per_qn) {
    events_.push_back({tick, {0xff, 0x51, 0x03, static_cast<uint8_t>(us_per_qn >> 16),
                              static_cast<uint8_t>(us_per_qn >> 8),
                              static_cast<uint8_t>(us_per_qn)}});
    return *this;
  }
  MidiBuilder& program(int64_t tick, int channel, int program) {
    events_.push_back({tick, {static_cast<uint8_t>(0xc0 | channel),
                              static_cast<uint8_t>(program)}});
    return *this;
  }
  MidiBuilder& note_on(int64_t tick, int channel, int pitch, int velocity = 100) {
    events_.push_back({tick, {static_cast<uint8_t>(0x90 | channel), static_cast<uint8_t>(pitch),
                              static_cast<uint8_t>(velocity)}});
    return *this;
  }
  MidiBuilder& note_off(int64_t tick, int channel, int pitch) {
    events_.push_back({tick, {static_cast<uint8_t>(0x80 | channel), static_cast<uint8_t>(pitch),
                              64}});
    return *this;
  }

  std::vector<uint8_t> build(uint16_t format = 0) const {
    std::vector<uint8_t> track;
    int64_t last_tick = 0;
    auto sorted = events_;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const Event& a, const Event& b) { return a.tick < b.tick; });
    for (const Event& e : sorted) {
      write_vlq(track, static_cast<uint32_t>(e.tick - last_tick));
      last_tick = e.tick;
      track.insert(track.end(), e.bytes.begin(), e.bytes.end());
    }
    // End of track.
    write_vlq(track, 0);
    track.insert(track.end(), {0xff, 0x2f, 0x00});

    std::vector<uint8_t> out;
    auto tag = [&](const char* t) { out.insert(out.end(), t, t + 4); };
    auto u32 = [&](uint32_t v) {
      out.push_back(static_cast<uint8_t>(v >> 24));
      out.push_back(static_cast<uint8_t>(v >> 16));
      out.push_back(static_cast<uint8_t>(v >> 8));
      out.push_back(static_cast<uint8_t>(v));
    };
    auto u16 = [&](uint16_t v) {
      out.push_back(static_cast<uint8_t>(v >> 8));
      out.push_back(static_cast<uint8_t>(v));
    };
    tag("MThd");
    u32(6);
    u16(format);
    u16(1);
    u16(static_cast<uint16_t>(tpq_));
    tag("MTrk");
    u32(static_cast<uint32_t>(track.size()));
    out.insert(out.end(), track.begin(), track.end());
    return out;
  }

 private:
  struct Event {
    int64_t tick;
    std::vector<uint8_t> bytes;
  };
  static void write_vlq(std::vector<uint8_t>& out, uint32_t v) {
    uint8_t bytes[4];
    int n = 0;
    do {
      bytes[n++] = static_cast<uint8_t>(v & 0x7f);
      v >>= 7;
    } while (v > 0);
    for (int i = n - 1; i > 0; --i) out.push_back(bytes[i] | 0x80);
    out.push_back(bytes[0]);
  }

  int tpq_;
  std::vector<Event> events_;
};

inline TimedNote note(double onset, double offset, int pitch, int program = 0) {
  TimedNote n;
  n.onset_s = onset;
  n.offset_s = offset;
  n.pitch = pitch;
  n.program = program;
  return n;
}

inline TimedNote drum(double onset, int pitch) {
  TimedNote n;
  n.onset_s = onset;
  n.pitch = pitch;
  n.is_drum = true;
  return n;
}

// Random track with realistic constraints: 1 ms timing grid, durations
// >= 50 ms, same-voice notes separated so the tokenizer roundtrip is exact
// up to time quantization.
inline std::vector<TimedNote> random_track(Rng& rng, int n_notes, double duration_s,
                                           int n_programs = 3, bool with_drums = true) {
  static const int programs[] = {0, 24, 40, 56, 71, 73};
  std::vector<TimedNote> notes;
  std::map<std::pair<int, int>, double> voice_end;
  for (int i = 0; i < n_notes; ++i) {
    TimedNote n;
    if (with_drums && rng.bernoulli(0.15)) {
      n.is_drum = true;
      n.pitch = 35 + static_cast<int>(rng.uniform_int(12));
      n.onset_s = std::floor(rng.uniform(0.0, duration_s - 0.1) * 1000.0) / 1000.0;
      notes.push_back(n);
      continue;
    }
    n.program = programs[rng.uniform_int(static_cast<uint64_t>(n_programs))];
    n.pitch = 36 + static_cast<int>(rng.uniform_int(48));
    const double dur = std::floor(rng.uniform(0.05, 1.8) * 1000.0) / 1000.0;
    n.onset_s = std::floor(rng.uniform(0.0, std::max(duration_s - dur - 0.05, 0.05)) * 1000.0) /
                1000.0;
    n.offset_s = n.onset_s + dur;
    auto key = std::make_pair(n.program, n.pitch);
    auto it = voice_end.find(key);
    if (it != voice_end.end() && n.onset_s < it->second + 0.025) continue;
    voice_end[key] = *n.offset_s;
    notes.push_back(n);
  }
  std::sort(notes.begin(), notes.end(), [](const TimedNote& a, const TimedNote& b) {
    return a.onset_s < b.onset_s;
  });
  return notes;
}

}  // namespace melsynth::testing
