#include "melsynth/note_events.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace melsynth {

Vocabulary::Vocabulary(const VocabConfig& cfg) : cfg_(cfg) {
  instrument_base_ = 0;
  note_base_ = instrument_base_ + cfg.num_programs;
  onoff_base_ = note_base_ + cfg.num_pitches;
  time_base_ = onoff_base_ + 2;
  drum_base_ = time_base_ + cfg.num_time_bins;
  end_tie_ = drum_base_ + cfg.num_drum_pitches;
  eos_ = end_tie_ + 1;
  pad_ = eos_ + 1;
}

void Vocabulary::check_range(int v, int n, const char* what) const {
  if (v < 0 || v >= n)
    throw ValueError(std::string(what) + " out of range: " + std::to_string(v));
}

int Vocabulary::instrument(int program) const {
  check_range(program, cfg_.num_programs, "program");
  return instrument_base_ + program;
}

int Vocabulary::note(int pitch) const {
  check_range(pitch, cfg_.num_pitches, "pitch");
  return note_base_ + pitch;
}

int Vocabulary::on_off(bool on) const { return onoff_base_ + (on ? 1 : 0); }

int Vocabulary::time(int bin) const {
  check_range(bin, cfg_.num_time_bins, "time bin");
  return time_base_ + bin;
}

int Vocabulary::drum(int pitch) const {
  check_range(pitch, cfg_.num_drum_pitches, "drum pitch");
  return drum_base_ + pitch;
}

Vocabulary::Group Vocabulary::group_of(int token) const {
  if (token < 0 || token > pad_) throw ValueError("token out of range: " + std::to_string(token));
  if (token < note_base_) return Group::kInstrument;
  if (token < onoff_base_) return Group::kNote;
  if (token < time_base_) return Group::kOnOff;
  if (token < drum_base_) return Group::kTime;
  if (token < end_tie_) return Group::kDrum;
  if (token == end_tie_) return Group::kEndTieSection;
  if (token == eos_) return Group::kEos;
  return Group::kPad;
}

int Vocabulary::value_of(int token) const {
  switch (group_of(token)) {
    case Group::kInstrument: return token - instrument_base_;
    case Group::kNote: return token - note_base_;
    case Group::kOnOff: return token - onoff_base_;
    case Group::kTime: return token - time_base_;
    case Group::kDrum: return token - drum_base_;
    default: return 0;
  }
}

std::vector<std::pair<int, int>> Vocabulary::group_ranges() const {
  return {{instrument_base_, cfg_.num_programs}, {note_base_, cfg_.num_pitches},
          {onoff_base_, 2},                      {time_base_, cfg_.num_time_bins},
          {drum_base_, cfg_.num_drum_pitches},   {end_tie_, 1},
          {eos_, 1},                             {pad_, 1}};
}

uint64_t Vocabulary::layout_hash() const {
  std::string desc;
  for (auto [base, size] : group_ranges())
    desc += std::to_string(base) + ":" + std::to_string(size) + ";";
  return fnv1a64(desc);
}

int64_t time_to_tick(double seconds) {
  return static_cast<int64_t>(std::llround(seconds / kTimeBinSeconds));
}

namespace {

struct Event {
  int64_t tick;       // emission tick (offset tick - 1 for Off events)
  int phase;          // 0 = off, 1 = on/drum, 2 = off of a same-tick note
  int class_id;
  int program;
  int pitch;
  bool is_drum;
  bool is_on;
};

bool event_less(const Event& a, const Event& b) {
  if (a.tick != b.tick) return a.tick < b.tick;
  if (a.phase != b.phase) return a.phase < b.phase;
  if (a.class_id != b.class_id) return a.class_id < b.class_id;
  if (a.program != b.program) return a.program < b.program;
  return a.pitch < b.pitch;
}

struct TieDecl {
  int class_id;
  int program;
  int pitch;
};

int64_t bins_per_window(double segment_duration_s) {
  double bins = segment_duration_s / kTimeBinSeconds;
  auto n = static_cast<int64_t>(std::llround(bins));
  if (std::abs(bins - static_cast<double>(n)) > 1e-9 || n <= 0)
    throw ValueError("segment duration must be a positive multiple of 10 ms");
  return n;
}

}  // namespace

TokenSeq encode_segment(std::span<const TimedNote> notes, const SegmentWindow& window,
                        const Vocabulary& vocab, const InstrumentMap& imap,
                        EncodeStats* stats, Warnings* warnings) {
  const int64_t nbins = bins_per_window(window.duration_s);
  if (nbins > vocab.num_time_bins())
    throw ValueError("segment duration exceeds the Time token range");
  const int64_t ws = time_to_tick(window.start_s);
  const int64_t we = ws + nbins;

  std::vector<TieDecl> ties;
  std::vector<Event> events;

  for (const TimedNote& n : notes) {
    if (n.pitch < 0 || n.pitch > 127) throw ValueError("pitch out of range");
    if (n.program < 0 || n.program > 127) throw ValueError("program out of range");
    const int64_t qt_on = time_to_tick(n.onset_s);
    const int cls = imap.class_of(n.program, n.is_drum);
    if (n.is_drum) {
      if (qt_on < ws || qt_on >= we)
        throw ValueError("drum event outside segment window");
      events.push_back({qt_on, 1, cls, n.program, n.pitch, true, true});
      continue;
    }
    if (!n.offset_s.has_value()) throw ValueError("non-drum note without offset");
    if (*n.offset_s <= n.onset_s) throw ValueError("note offset must follow onset");
    int64_t qt_off = std::max(time_to_tick(*n.offset_s), qt_on + 1);
    const int64_t off_tick = qt_off - 1;  // last sounding tick
    const bool on_here = qt_on >= ws && qt_on < we;
    const bool off_here = off_tick >= ws && off_tick < we;
    const bool tie_here = qt_on < ws && qt_off > ws;
    if (!on_here && !off_here && !tie_here)
      throw ValueError("note outside segment window");
    if (tie_here) ties.push_back({cls, n.program, n.pitch});
    if (on_here) events.push_back({qt_on, 1, cls, n.program, n.pitch, false, true});
    if (off_here) {
      const int phase = (on_here && off_tick == qt_on) ? 2 : 0;
      events.push_back({off_tick, phase, cls, n.program, n.pitch, false, false});
    }
  }

  std::sort(ties.begin(), ties.end(), [](const TieDecl& a, const TieDecl& b) {
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    if (a.program != b.program) return a.program < b.program;
    return a.pitch < b.pitch;
  });
  std::sort(events.begin(), events.end(), event_less);

  TokenSeq out;
  out.reserve(2 + ties.size() * 2 + events.size() * 4);
  for (const TieDecl& t : ties) {
    out.push_back(vocab.instrument(t.program));
    out.push_back(vocab.note(t.pitch));
  }
  out.push_back(vocab.end_tie_section());
  size_t emitted = 0;
  for (const Event& e : events) {
    const size_t need = e.is_drum ? 2 : 4;
    if (out.size() + need + 1 > kMaxTokensPerSegment) {
      int dropped = static_cast<int>(events.size() - emitted);
      if (stats) stats->truncated_events += dropped;
      warn(warnings, "segment at " + std::to_string(window.start_s) + "s truncated: dropped " +
                         std::to_string(dropped) + " events");
      break;
    }
    out.push_back(vocab.time(static_cast<int>(e.tick - ws)));
    if (e.is_drum) {
      out.push_back(vocab.drum(e.pitch));
    } else {
      out.push_back(vocab.instrument(e.program));
      out.push_back(vocab.on_off(e.is_on));
      out.push_back(vocab.note(e.pitch));
    }
    ++emitted;
  }
  out.push_back(vocab.eos());
  return out;
}

DecodedSegment decode_segment(std::span<const int> tokens, const SegmentWindow& window,
                              const Vocabulary& vocab, Warnings* warnings) {
  using Group = Vocabulary::Group;
  const int64_t ws = time_to_tick(window.start_s);
  DecodedSegment out;
  // Open notes by (program, pitch); value = index into out.notes, FIFO.
  std::map<std::pair<int, int>, std::vector<size_t>> open;

  auto fail = [&](size_t pos, const std::string& msg) {
    throw FormatError("token " + std::to_string(pos) + ": " + msg);
  };

  size_t i = 0;
  // Tie section.
  for (;; ) {
    if (i >= tokens.size()) fail(i, "sequence ended before EndTieSection");
    Group g = vocab.group_of(tokens[i]);
    if (g == Group::kEndTieSection) {
      ++i;
      break;
    }
    if (g != Group::kInstrument) fail(i, "expected Instrument or EndTieSection");
    int program = vocab.value_of(tokens[i]);
    ++i;
    if (i >= tokens.size() || vocab.group_of(tokens[i]) != Group::kNote)
      fail(i, "expected Note after tie Instrument");
    int pitch = vocab.value_of(tokens[i]);
    ++i;
    out.tie_section.emplace_back(program, pitch);
    SegmentNote n;
    n.pitch = pitch;
    n.program = program;
    out.notes.push_back(n);
    open[{program, pitch}].push_back(out.notes.size() - 1);
  }

  // Events.
  bool saw_eos = false;
  while (i < tokens.size()) {
    Group g = vocab.group_of(tokens[i]);
    if (g == Group::kEos) {
      saw_eos = true;
      ++i;
      break;
    }
    if (g != Group::kTime) fail(i, "expected Time or EOS");
    const double t = (ws + vocab.value_of(tokens[i])) * kTimeBinSeconds;
    ++i;
    if (i >= tokens.size()) fail(i, "sequence ended after Time");
    g = vocab.group_of(tokens[i]);
    if (g == Group::kDrum) {
      SegmentNote n;
      n.onset_s = t;
      n.pitch = vocab.value_of(tokens[i]);
      n.program = 0;
      n.is_drum = true;
      out.notes.push_back(n);
      ++i;
      continue;
    }
    if (g != Group::kInstrument) fail(i, "expected Instrument or Drum after Time");
    int program = vocab.value_of(tokens[i]);
    ++i;
    if (i >= tokens.size() || vocab.group_of(tokens[i]) != Group::kOnOff)
      fail(i, "expected OnOff after Instrument");
    bool on = vocab.value_of(tokens[i]) == 1;
    ++i;
    if (i >= tokens.size() || vocab.group_of(tokens[i]) != Group::kNote)
      fail(i, "expected Note after OnOff");
    int pitch = vocab.value_of(tokens[i]);
    ++i;
    if (on) {
      SegmentNote n;
      n.onset_s = t;
      n.pitch = pitch;
      n.program = program;
      out.notes.push_back(n);
      open[{program, pitch}].push_back(out.notes.size() - 1);
    } else {
      auto it = open.find({program, pitch});
      if (it == open.end() || it->second.empty()) {
        warn(warnings, "token " + std::to_string(i - 1) + ": Off without active note, skipped");
        continue;
      }
      size_t idx = it->second.front();
      it->second.erase(it->second.begin());
      // Off events sit on the last sounding tick.
      out.notes[idx].offset_s = t + kTimeBinSeconds;
    }
  }
  if (!saw_eos) fail(i, "missing EOS");
  for (; i < tokens.size(); ++i)
    if (vocab.group_of(tokens[i]) != Group::kPad) fail(i, "only PAD allowed after EOS");
  return out;
}

int derive_window_count(std::span<const TimedNote> notes, double segment_duration_s) {
  const int64_t nbins = bins_per_window(segment_duration_s);
  int64_t max_tick = 0;
  for (const TimedNote& n : notes) {
    int64_t t = time_to_tick(n.onset_s);
    if (!n.is_drum && n.offset_s.has_value())
      t = std::max(time_to_tick(*n.offset_s), time_to_tick(n.onset_s) + 1) - 1;
    max_tick = std::max(max_tick, t);
  }
  return static_cast<int>(max_tick / nbins) + 1;
}

std::vector<std::pair<SegmentWindow, TokenSeq>> encode_windows(
    std::span<const TimedNote> notes, int num_windows, const Vocabulary& vocab,
    const InstrumentMap& imap, double segment_duration_s, Warnings* warnings) {
  const int64_t nbins = bins_per_window(segment_duration_s);
  std::vector<std::pair<SegmentWindow, TokenSeq>> out;
  out.reserve(num_windows);
  for (int k = 0; k < num_windows; ++k) {
    SegmentWindow w{static_cast<double>(k * nbins) * kTimeBinSeconds, segment_duration_s};
    const int64_t ws = k * nbins, we = ws + nbins;
    std::vector<TimedNote> in_window;
    for (const TimedNote& n : notes) {
      const int64_t qt_on = time_to_tick(n.onset_s);
      if (n.is_drum) {
        if (qt_on >= ws && qt_on < we) in_window.push_back(n);
        continue;
      }
      if (!n.offset_s.has_value()) continue;
      const int64_t qt_off = std::max(time_to_tick(*n.offset_s), qt_on + 1);
      if (qt_on < we && qt_off - 1 >= ws) in_window.push_back(n);
    }
    out.emplace_back(w, encode_segment(in_window, w, vocab, imap, nullptr, warnings));
  }
  return out;
}

std::vector<std::pair<SegmentWindow, TokenSeq>> split_track(
    std::span<const TimedNote> notes, const Vocabulary& vocab, const InstrumentMap& imap,
    double segment_duration_s, Warnings* warnings) {
  return encode_windows(notes, derive_window_count(notes, segment_duration_s), vocab, imap,
                        segment_duration_s, warnings);
}

std::vector<TimedNote> stitch_segments(std::span<const DecodedSegment> segments,
                                       std::span<const SegmentWindow> windows,
                                       Warnings* warnings) {
  if (segments.size() != windows.size())
    throw ValueError("segment/window count mismatch");
  std::vector<TimedNote> out;
  // Notes still open after the previous segment: (program,pitch) -> indices
  // into `out`, FIFO.
  std::map<std::pair<int, int>, std::vector<size_t>> carried;

  for (size_t k = 0; k < segments.size(); ++k) {
    std::map<std::pair<int, int>, std::vector<size_t>> next_carried;
    std::map<std::pair<int, int>, std::vector<size_t>> tied;  // resolved tie-ins
    for (const SegmentNote& n : segments[k].notes) {
      if (n.is_drum) {
        TimedNote tn;
        tn.onset_s = *n.onset_s;
        tn.pitch = n.pitch;
        tn.program = n.program;
        tn.is_drum = true;
        out.push_back(tn);
        continue;
      }
      if (n.tie_in()) {
        auto key = std::make_pair(n.program, n.pitch);
        auto it = carried.find(key);
        if (it == carried.end() || it->second.empty()) {
          warn(warnings, "segment " + std::to_string(k) + ": tie-in with no open note, " +
                             "treating as onset at window start");
          TimedNote tn;
          tn.onset_s = windows[k].start_s;
          tn.pitch = n.pitch;
          tn.program = n.program;
          out.push_back(tn);
          if (n.offset_s.has_value())
            out.back().offset_s = *n.offset_s;
          else
            next_carried[key].push_back(out.size() - 1);
          continue;
        }
        size_t idx = it->second.front();
        it->second.erase(it->second.begin());
        if (n.offset_s.has_value())
          out[idx].offset_s = *n.offset_s;
        else
          tied[key].push_back(idx);
        continue;
      }
      TimedNote tn;
      tn.onset_s = *n.onset_s;
      tn.pitch = n.pitch;
      tn.program = n.program;
      if (n.offset_s.has_value()) tn.offset_s = *n.offset_s;
      out.push_back(tn);
      if (!n.offset_s.has_value())
        next_carried[{n.program, n.pitch}].push_back(out.size() - 1);
    }
    for (auto& [key, idxs] : carried)
      if (!idxs.empty())
        warn(warnings, "segment " + std::to_string(k) + ": open note not re-declared in tie " +
                           "section, closing at window start");
    for (auto& [key, idxs] : carried)
      for (size_t idx : idxs) out[idx].offset_s = windows[k].start_s;
    for (auto& [key, idxs] : tied)
      for (size_t idx : idxs) next_carried[key].push_back(idx);
    carried = std::move(next_carried);
  }
  // Anything still open ends at the final window boundary.
  for (auto& [key, idxs] : carried)
    for (size_t idx : idxs) {
      warn(warnings, "track ends with open note, closing at track end");
      out[idx].offset_s = windows.back().end_s();
    }
  std::sort(out.begin(), out.end(), [](const TimedNote& a, const TimedNote& b) {
    if (a.onset_s != b.onset_s) return a.onset_s < b.onset_s;
    if (a.program != b.program) return a.program < b.program;
    return a.pitch < b.pitch;
  });
  return out;
}

std::string tokens_to_line(const TokenSeq& tokens) {
  std::string line;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) line += ' ';
    line += std::to_string(tokens[i]);
  }
  return line;
}

TokenSeq line_to_tokens(const std::string& line) {
  TokenSeq out;
  std::istringstream in(line);
  int v;
  while (in >> v) out.push_back(v);
  if (!in.eof()) throw FormatError("token line contains non-integer data");
  return out;
}

}  // namespace melsynth
