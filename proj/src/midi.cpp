#include "melsynth/note_events.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

namespace melsynth {

namespace {

// Cursor over SMF bytes; every read error carries the byte offset.
struct Reader {
  std::span<const uint8_t> data;
  size_t pos = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError("midi: " + msg + " at byte " + std::to_string(pos));
  }
  uint8_t u8() {
    if (pos >= data.size()) fail("unexpected end of file");
    return data[pos++];
  }
  uint32_t u16() {
    uint32_t hi = u8();
    return (hi << 8) | u8();
  }
  uint32_t u32() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | u8();
    return v;
  }
  uint32_t vlq() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      uint8_t b = u8();
      v = (v << 7) | (b & 0x7f);
      if (!(b & 0x80)) return v;
    }
    fail("variable-length quantity too long");
  }
  void expect_tag(const char* tag) {
    for (int i = 0; i < 4; ++i)
      if (u8() != static_cast<uint8_t>(tag[i]))
        fail(std::string("expected '") + tag + "' chunk");
  }
  void skip(size_t n) {
    if (pos + n > data.size()) fail("chunk overruns file");
    pos += n;
  }
};

struct RawEvent {
  int64_t tick;
  int order;  // file order, to keep merging stable
  uint8_t status;
  uint8_t d1, d2;
  uint32_t tempo_us = 0;  // for tempo meta events
  bool is_tempo = false;
};

// Piecewise-linear tick -> seconds map built from Set Tempo events.
class TempoMap {
 public:
  void add(int64_t tick, uint32_t us_per_qn) { changes_.emplace_back(tick, us_per_qn); }

  void finalize(int ticks_per_qn) {
    tpq_ = ticks_per_qn;
    std::stable_sort(changes_.begin(), changes_.end(),
                     [](auto& a, auto& b) { return a.first < b.first; });
    seconds_at_.clear();
    double t = 0.0;
    int64_t prev_tick = 0;
    uint32_t tempo = 500000;  // default 120 BPM
    for (auto& [tick, us] : changes_) {
      t += static_cast<double>(tick - prev_tick) / tpq_ * tempo * 1e-6;
      seconds_at_.push_back({tick, t, us});
      prev_tick = tick;
      tempo = us;
    }
  }

  double seconds(int64_t tick) const {
    double base = 0.0;
    int64_t base_tick = 0;
    uint32_t tempo = 500000;
    for (auto& c : seconds_at_) {
      if (c.tick > tick) break;
      base = c.seconds;
      base_tick = c.tick;
      tempo = c.us_per_qn;
    }
    return base + static_cast<double>(tick - base_tick) / tpq_ * tempo * 1e-6;
  }

 private:
  struct Change {
    int64_t tick;
    double seconds;
    uint32_t us_per_qn;
  };
  std::vector<std::pair<int64_t, uint32_t>> changes_;
  std::vector<Change> seconds_at_;
  int tpq_ = 480;
};

}  // namespace

std::vector<TimedNote> midi_to_notes(std::span<const uint8_t> midi_bytes, Warnings* warnings) {
  Reader r{midi_bytes};
  r.expect_tag("MThd");
  uint32_t hlen = r.u32();
  if (hlen < 6) r.fail("header chunk too short");
  uint32_t format = r.u16();
  uint32_t ntrks = r.u16();
  uint32_t division = r.u16();
  r.skip(hlen - 6);
  if (format > 1) r.fail("unsupported SMF format " + std::to_string(format));
  if (division & 0x8000) r.fail("SMPTE time division not supported");
  if (division == 0) r.fail("zero ticks per quarter note");

  std::vector<RawEvent> events;
  TempoMap tempo_map;
  int order = 0;

  for (uint32_t trk = 0; trk < ntrks; ++trk) {
    r.expect_tag("MTrk");
    uint32_t len = r.u32();
    size_t end = r.pos + len;
    if (end > midi_bytes.size()) r.fail("track chunk overruns file");
    int64_t tick = 0;
    uint8_t running = 0;
    while (r.pos < end) {
      tick += r.vlq();
      uint8_t status = r.u8();
      if (status < 0x80) {
        if (running == 0) r.fail("data byte with no running status");
        --r.pos;
        status = running;
      }
      if (status == 0xff) {
        uint8_t type = r.u8();
        uint32_t mlen = r.vlq();
        if (type == 0x51) {
          if (mlen != 3) r.fail("bad tempo meta length");
          uint32_t us = (static_cast<uint32_t>(r.u8()) << 16);
          us |= (static_cast<uint32_t>(r.u8()) << 8);
          us |= r.u8();
          tempo_map.add(tick, us);
        } else {
          r.skip(mlen);
        }
        continue;  // meta events clear running status per some writers; keep it simple
      }
      if (status == 0xf0 || status == 0xf7) {
        uint32_t slen = r.vlq();
        r.skip(slen);
        continue;
      }
      running = status;
      uint8_t hi = status & 0xf0;
      RawEvent ev{tick, order++, status, 0, 0};
      switch (hi) {
        case 0x80:  // note off
        case 0x90:  // note on
        case 0xa0:  // poly pressure
        case 0xb0:  // control change
        case 0xe0:  // pitch bend
          ev.d1 = r.u8();
          ev.d2 = r.u8();
          break;
        case 0xc0:  // program change
        case 0xd0:  // channel pressure
          ev.d1 = r.u8();
          break;
        default:
          r.fail("unknown status byte");
      }
      events.push_back(ev);
    }
    if (r.pos != end) r.fail("track events overran chunk length");
  }

  tempo_map.finalize(static_cast<int>(division));
  std::stable_sort(events.begin(), events.end(), [](const RawEvent& a, const RawEvent& b) {
    if (a.tick != b.tick) return a.tick < b.tick;
    return a.order < b.order;
  });

  std::vector<TimedNote> notes;
  int program_of_channel[16] = {0};
  // Open notes per (channel, pitch), FIFO.
  std::map<std::pair<int, int>, std::vector<size_t>> open;
  int64_t last_tick = 0;

  for (const RawEvent& ev : events) {
    last_tick = std::max(last_tick, ev.tick);
    uint8_t hi = ev.status & 0xf0;
    int ch = ev.status & 0x0f;
    if (hi == 0xc0) {
      program_of_channel[ch] = ev.d1 & 0x7f;
      continue;
    }
    bool note_on = hi == 0x90 && ev.d2 > 0;
    bool note_off = hi == 0x80 || (hi == 0x90 && ev.d2 == 0);
    if (!note_on && !note_off) continue;
    int pitch = ev.d1 & 0x7f;
    double t = tempo_map.seconds(ev.tick);
    if (note_on) {
      TimedNote n;
      n.onset_s = t;
      n.pitch = pitch;
      n.is_drum = (ch == 9);
      n.program = n.is_drum ? 0 : program_of_channel[ch];
      notes.push_back(n);
      if (!n.is_drum) open[{ch, pitch}].push_back(notes.size() - 1);
    } else {
      if (ch == 9) continue;  // drum offs carry no information here
      auto it = open.find({ch, pitch});
      if (it == open.end() || it->second.empty()) {
        warn(warnings, "midi: note-off without note-on (channel " + std::to_string(ch + 1) +
                           ", pitch " + std::to_string(pitch) + "), ignored");
        continue;
      }
      size_t idx = it->second.front();
      it->second.erase(it->second.begin());
      notes[idx].offset_s = std::max(t, notes[idx].onset_s + 1e-4);
    }
  }

  double end_time = tempo_map.seconds(last_tick);
  for (auto& [key, idxs] : open)
    for (size_t idx : idxs) {
      warn(warnings, "midi: note still on at end of track (pitch " +
                         std::to_string(notes[idx].pitch) + "), closing at track end");
      notes[idx].offset_s = std::max(end_time, notes[idx].onset_s + 1e-4);
    }

  std::sort(notes.begin(), notes.end(), [](const TimedNote& a, const TimedNote& b) {
    if (a.onset_s != b.onset_s) return a.onset_s < b.onset_s;
    if (a.program != b.program) return a.program < b.program;
    return a.pitch < b.pitch;
  });
  return notes;
}

std::vector<TimedNote> midi_file_to_notes(const std::string& path, Warnings* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("midi file not found: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return midi_to_notes(bytes, warnings);
}

}  // namespace melsynth
