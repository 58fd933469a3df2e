#pragma once

#include "melsynth/common.hpp"
#include "melsynth/instrument_map.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace melsynth {

// One note with absolute track times. Drums carry no offset.
struct TimedNote {
  double onset_s = 0.0;
  std::optional<double> offset_s;  // empty for drums
  int pitch = 0;                   // 0..127 (drum sound number for drums)
  int program = 0;                 // 0..127
  bool is_drum = false;
};

struct SegmentWindow {
  double start_s = 0.0;
  double duration_s = 5.12;
  double end_s() const { return start_s + duration_s; }
};

using TokenSeq = std::vector<int>;

struct VocabConfig {
  int num_programs = 128;
  int num_pitches = 128;
  int num_time_bins = 512;
  int num_drum_pitches = 128;
};

// Note-event token vocabulary. Groups in id order: Instrument, Note, OnOff,
// Time, Drum, EndTieSection, EOS, then PAD appended after the event tokens.
// With the default config: 128+128+2+512+128+1+1 = 900 event tokens, 901 total.
class Vocabulary {
 public:
  explicit Vocabulary(const VocabConfig& cfg = {});

  int size() const { return pad_ + 1; }

  int instrument(int program) const;
  int note(int pitch) const;
  int on_off(bool on) const;
  int time(int bin) const;
  int drum(int pitch) const;
  int end_tie_section() const { return end_tie_; }
  int eos() const { return eos_; }
  int pad() const { return pad_; }

  const VocabConfig& config() const { return cfg_; }
  int num_time_bins() const { return cfg_.num_time_bins; }

  enum class Group { kInstrument, kNote, kOnOff, kTime, kDrum, kEndTieSection, kEos, kPad };
  Group group_of(int token) const;
  // Offset of `token` within its group.
  int value_of(int token) const;
  // First id and size for each group, in id order.
  std::vector<std::pair<int, int>> group_ranges() const;

  // Stable hash of the vocabulary layout; stored in checkpoints.
  uint64_t layout_hash() const;

 private:
  void check_range(int v, int n, const char* what) const;

  VocabConfig cfg_;
  int instrument_base_, note_base_, onoff_base_, time_base_, drum_base_;
  int end_tie_, eos_, pad_;
};

// --- MIDI ingestion ---------------------------------------------------------

// Parses a Standard MIDI File (format 0 or 1) into absolute-time notes.
// The tempo map is applied across all tracks; channel 10 events are drums.
// Malformed input throws FormatError naming the byte offset. Note-offs with
// no matching note-on are ignored with a warning; notes still sounding at
// end of track are closed there with a warning.
std::vector<TimedNote> midi_to_notes(std::span<const uint8_t> midi_bytes,
                                     Warnings* warnings = nullptr);

std::vector<TimedNote> midi_file_to_notes(const std::string& path, Warnings* warnings = nullptr);

// --- Segment tokenizer ------------------------------------------------------
//
// Serialization grammar for one segment:
//
//   segment  := tie* EndTieSection event* EOS PAD*
//   tie      := Instrument(program) Note(pitch)
//   event    := Time(bin) ( Instrument(program) OnOff(on|off) Note(pitch)
//                         | Drum(pitch) )
//
// Times are quantized to the global 10 ms grid (tick = round(t / 10 ms));
// bin = tick - window_start_tick. An Off event is placed at the note's last
// sounding tick (offset tick - 1) so that offsets landing exactly on a
// window boundary stay representable; decode adds the tick back. A note is
// declared in the tie section of window k iff its onset tick < window start
// and its offset tick > window start. Events are ordered by
// (tick, off-before-on, class id, program, pitch); the Off of a note whose
// On falls on the same tick sorts after the Ons instead.

inline constexpr double kTimeBinSeconds = 0.010;
inline constexpr int kMaxTokensPerSegment = 2048;

int64_t time_to_tick(double seconds);

struct EncodeStats {
  int truncated_events = 0;
};

TokenSeq encode_segment(std::span<const TimedNote> notes, const SegmentWindow& window,
                        const Vocabulary& vocab, const InstrumentMap& imap,
                        EncodeStats* stats = nullptr, Warnings* warnings = nullptr);

// One note as seen from within a segment. onset_s is empty for tie-ins,
// offset_s is empty for tie-outs (and drums).
struct SegmentNote {
  std::optional<double> onset_s;
  std::optional<double> offset_s;
  int pitch = 0;
  int program = 0;
  bool is_drum = false;
  bool tie_in() const { return !onset_s.has_value(); }
  bool tie_out() const { return !is_drum && !offset_s.has_value(); }
};

struct DecodedSegment {
  std::vector<SegmentNote> notes;
  // (program, pitch) pairs declared before EndTieSection, in token order.
  std::vector<std::pair<int, int>> tie_section;
};

DecodedSegment decode_segment(std::span<const int> tokens, const SegmentWindow& window,
                              const Vocabulary& vocab, Warnings* warnings = nullptr);

// Contiguous non-overlapping windows covering all note events, each encoded.
std::vector<std::pair<SegmentWindow, TokenSeq>> split_track(
    std::span<const TimedNote> notes, const Vocabulary& vocab, const InstrumentMap& imap,
    double segment_duration_s = 5.12, Warnings* warnings = nullptr);

// Same, with a caller-chosen window count (used when audio length fixes the
// number of segments).
std::vector<std::pair<SegmentWindow, TokenSeq>> encode_windows(
    std::span<const TimedNote> notes, int num_windows, const Vocabulary& vocab,
    const InstrumentMap& imap, double segment_duration_s = 5.12, Warnings* warnings = nullptr);

int derive_window_count(std::span<const TimedNote> notes, double segment_duration_s = 5.12);

// Reassembles decoded segments into track-level notes by matching tie-outs
// to the following segment's tie-ins on (program, pitch), FIFO per pair.
std::vector<TimedNote> stitch_segments(std::span<const DecodedSegment> segments,
                                       std::span<const SegmentWindow> windows,
                                       Warnings* warnings = nullptr);

// One line of space-separated ints.
std::string tokens_to_line(const TokenSeq& tokens);
TokenSeq line_to_tokens(const std::string& line);

}  // namespace melsynth
