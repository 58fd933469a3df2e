#include "melsynth/note_events.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

using namespace melsynth;
using namespace melsynth::testing;

TEST_SUITE("vocabulary") {
  TEST_CASE("default vocabulary has 901 tokens with the documented group sizes") {
    Vocabulary vocab;
    CHECK(vocab.size() == 901);
    auto ranges = vocab.group_ranges();
    REQUIRE(ranges.size() == 8);
    CHECK(ranges[0].second == 128);  // Instrument
    CHECK(ranges[1].second == 128);  // Note
    CHECK(ranges[2].second == 2);    // OnOff
    CHECK(ranges[3].second == 512);  // Time
    CHECK(ranges[4].second == 128);  // Drum
    CHECK(ranges[5].second == 1);    // EndTieSection
    CHECK(ranges[6].second == 1);    // EOS
    CHECK(ranges[7].second == 1);    // PAD
  }

  TEST_CASE("EOS is the last event-vocabulary id, PAD is appended after it") {
    Vocabulary vocab;
    CHECK(vocab.eos() == 899);
    CHECK(vocab.pad() == 900);
    CHECK(vocab.end_tie_section() == 898);
  }

  TEST_CASE("group ranges partition [0, size)") {
    Vocabulary vocab;
    std::vector<int> covered(static_cast<size_t>(vocab.size()), 0);
    for (auto [base, size] : vocab.group_ranges())
      for (int t = base; t < base + size; ++t) covered[static_cast<size_t>(t)]++;
    CHECK(std::all_of(covered.begin(), covered.end(), [](int c) { return c == 1; }));
  }

  TEST_CASE("construction is deterministic") {
    Vocabulary a, b;
    CHECK(a.layout_hash() == b.layout_hash());
    for (int t = 0; t < a.size(); ++t) {
      CHECK(a.group_of(t) == b.group_of(t));
      CHECK(a.value_of(t) == b.value_of(t));
    }
  }

  TEST_CASE("token constructors and group_of/value_of agree") {
    Vocabulary vocab;
    CHECK(vocab.group_of(vocab.instrument(5)) == Vocabulary::Group::kInstrument);
    CHECK(vocab.value_of(vocab.instrument(5)) == 5);
    CHECK(vocab.value_of(vocab.note(127)) == 127);
    CHECK(vocab.value_of(vocab.time(511)) == 511);
    CHECK(vocab.value_of(vocab.drum(9)) == 9);
    CHECK(vocab.value_of(vocab.on_off(true)) == 1);
    CHECK(vocab.value_of(vocab.on_off(false)) == 0);
    CHECK_THROWS_AS(vocab.time(512), ValueError);
    CHECK_THROWS_AS(vocab.instrument(128), ValueError);
  }
}

TEST_SUITE("tokenizer") {
  const Vocabulary vocab;
  const InstrumentMap& imap = InstrumentMap::builtin();

  TEST_CASE("empty segment encodes to [EndTieSection, EOS]") {
    SegmentWindow w{0.0, 5.12};
    auto tokens = encode_segment({}, w, vocab, imap);
    REQUIRE(tokens.size() == 2);
    CHECK(tokens[0] == vocab.end_tie_section());
    CHECK(tokens[1] == vocab.eos());
    auto decoded = decode_segment(tokens, w, vocab);
    CHECK(decoded.notes.empty());
    CHECK(decoded.tie_section.empty());
  }

  TEST_CASE("single note traces to the documented serialization") {
    // Piano note, onset at window start, offset at 1.0 s. The Off event sits
    // on the last sounding tick (99), decode restores offset tick 100.
    SegmentWindow w{0.0, 5.12};
    std::vector<TimedNote> notes = {note(0.0, 1.0, 60, 0)};
    auto tokens = encode_segment(notes, w, vocab, imap);
    TokenSeq expected = {
        vocab.end_tie_section(),
        vocab.time(0),  vocab.instrument(0), vocab.on_off(true),  vocab.note(60),
        vocab.time(99), vocab.instrument(0), vocab.on_off(false), vocab.note(60),
        vocab.eos(),
    };
    CHECK(tokens == expected);
    auto decoded = decode_segment(tokens, w, vocab);
    REQUIRE(decoded.notes.size() == 1);
    CHECK(decoded.notes[0].onset_s.value() == doctest::Approx(0.0));
    CHECK(decoded.notes[0].offset_s.value() == doctest::Approx(1.0));
  }

  TEST_CASE("note spanning the window start is declared in the tie section") {
    SegmentWindow w{5.12, 5.12};
    std::vector<TimedNote> notes = {note(5.0, 5.3, 64, 40)};
    auto tokens = encode_segment(notes, w, vocab, imap);
    TokenSeq expected = {
        vocab.instrument(40), vocab.note(64),
        vocab.end_tie_section(),
        vocab.time(17),  // offset tick 530, event tick 529, bin 529-512
        vocab.instrument(40), vocab.on_off(false), vocab.note(64),
        vocab.eos(),
    };
    CHECK(tokens == expected);
    auto decoded = decode_segment(tokens, w, vocab);
    REQUIRE(decoded.tie_section.size() == 1);
    CHECK(decoded.tie_section[0] == std::make_pair(40, 64));
    REQUIRE(decoded.notes.size() == 1);
    CHECK(decoded.notes[0].tie_in());
    CHECK(decoded.notes[0].offset_s.value() == doctest::Approx(5.3));
  }

  TEST_CASE("On without Off decodes as an open tie-out note") {
    SegmentWindow w{0.0, 5.12};
    TokenSeq tokens = {vocab.end_tie_section(), vocab.time(100), vocab.instrument(0),
                       vocab.on_off(true), vocab.note(72), vocab.eos()};
    auto decoded = decode_segment(tokens, w, vocab);
    REQUIRE(decoded.notes.size() == 1);
    CHECK(decoded.notes[0].tie_out());
    CHECK(decoded.notes[0].onset_s.value() == doctest::Approx(1.0));
    CHECK_FALSE(decoded.notes[0].offset_s.has_value());
  }

  TEST_CASE("drum events serialize as Time + Drum") {
    SegmentWindow w{0.0, 5.12};
    std::vector<TimedNote> notes = {drum(0.5, 38)};
    auto tokens = encode_segment(notes, w, vocab, imap);
    TokenSeq expected = {vocab.end_tie_section(), vocab.time(50), vocab.drum(38), vocab.eos()};
    CHECK(tokens == expected);
    auto decoded = decode_segment(tokens, w, vocab);
    REQUIRE(decoded.notes.size() == 1);
    CHECK(decoded.notes[0].is_drum);
    CHECK(decoded.notes[0].onset_s.value() == doctest::Approx(0.5));
  }

  TEST_CASE("out-of-grammar token order reports the position") {
    SegmentWindow w{0.0, 5.12};
    TokenSeq bad = {vocab.end_tie_section(), vocab.instrument(0), vocab.eos()};
    CHECK_THROWS_WITH_AS(decode_segment(bad, w, vocab), doctest::Contains("token 1"),
                         FormatError);
    TokenSeq no_eos = {vocab.end_tie_section()};
    CHECK_THROWS_AS(decode_segment(no_eos, w, vocab), FormatError);
    TokenSeq after_eos = {vocab.end_tie_section(), vocab.eos(), vocab.time(1)};
    CHECK_THROWS_AS(decode_segment(after_eos, w, vocab), FormatError);
  }

  TEST_CASE("unmatched Off is skipped with a warning") {
    SegmentWindow w{0.0, 5.12};
    TokenSeq tokens = {vocab.end_tie_section(), vocab.time(10), vocab.instrument(0),
                       vocab.on_off(false), vocab.note(60), vocab.eos()};
    Warnings warnings;
    auto decoded = decode_segment(tokens, w, vocab, &warnings);
    CHECK(decoded.notes.empty());
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("Off without active note") != std::string::npos);
  }

  TEST_CASE("encoding is order-canonical: shuffled input produces identical tokens") {
    SegmentWindow w{0.0, 5.12};
    Rng rng(7);
    auto notes = random_track(rng, 40, 5.0);
    auto shuffled = notes;
    for (size_t i = shuffled.size(); i > 1; --i)
      std::swap(shuffled[i - 1], shuffled[rng.uniform_int(i)]);
    CHECK(encode_segment(notes, w, vocab, imap) == encode_segment(shuffled, w, vocab, imap));
  }

  TEST_CASE("simultaneous events order Off before On, then class, then pitch") {
    SegmentWindow w{0.0, 5.12};
    // Violin off event lands on tick 100 (offset tick 101 - 1); piano on is
    // also at tick 100. The release must serialize before the attack.
    std::vector<TimedNote> notes = {note(1.0, 2.0, 60, 0), note(0.5, 1.01, 72, 40)};
    auto tokens = encode_segment(notes, w, vocab, imap);
    auto at_100 = std::find(tokens.begin(), tokens.end(), vocab.time(100));
    REQUIRE(at_100 != tokens.end());
    CHECK(*(at_100 + 1) == vocab.instrument(40));
    CHECK(*(at_100 + 2) == vocab.on_off(false));
    CHECK(*(at_100 + 3) == vocab.note(72));
    CHECK(*(at_100 + 4) == vocab.time(100));
    CHECK(*(at_100 + 5) == vocab.instrument(0));
    CHECK(*(at_100 + 6) == vocab.on_off(true));
    CHECK(*(at_100 + 7) == vocab.note(60));

    // At equal tick and phase, lower class id first, then pitch.
    std::vector<TimedNote> chord = {note(1.0, 2.0, 64, 40), note(1.0, 2.0, 60, 0),
                                    note(1.0, 2.0, 55, 0)};
    auto ctokens = encode_segment(chord, w, vocab, imap);
    TokenSeq expected = {vocab.end_tie_section(),
                         vocab.time(100), vocab.instrument(0),  vocab.on_off(true), vocab.note(55),
                         vocab.time(100), vocab.instrument(0),  vocab.on_off(true), vocab.note(60),
                         vocab.time(100), vocab.instrument(40), vocab.on_off(true), vocab.note(64)};
    CHECK(std::equal(expected.begin(), expected.end(), ctokens.begin()));
  }

  TEST_CASE("truncation keeps the sequence under the cap and warns") {
    SegmentWindow w{0.0, 5.12};
    std::vector<TimedNote> notes;
    for (int i = 0; i < 800; ++i) {
      double onset = 0.005 * i;
      notes.push_back(note(onset, onset + 0.05, 30 + (i % 60), i % 8));
    }
    EncodeStats stats;
    Warnings warnings;
    auto tokens = encode_segment(notes, w, vocab, imap, &stats, &warnings);
    CHECK(tokens.size() <= kMaxTokensPerSegment);
    CHECK(tokens.back() == vocab.eos());
    CHECK(stats.truncated_events > 0);
    CHECK(!warnings.empty());
  }

  TEST_CASE("notes fully outside the window are rejected") {
    SegmentWindow w{0.0, 5.12};
    std::vector<TimedNote> notes = {note(6.0, 7.0, 60, 0)};
    CHECK_THROWS_AS(encode_segment(notes, w, vocab, imap), ValueError);
  }
}

TEST_SUITE("tokenizer_split") {
  const Vocabulary vocab;
  const InstrumentMap& imap = InstrumentMap::builtin();

  TEST_CASE("10.24 s track covers exactly 2 windows") {
    std::vector<TimedNote> notes = {note(0.0, 10.24, 60, 0)};
    auto segs = split_track(notes, vocab, imap);
    CHECK(segs.size() == 2);
  }

  TEST_CASE("11 s track covers 3 windows") {
    std::vector<TimedNote> notes = {note(0.0, 11.0, 60, 0)};
    auto segs = split_track(notes, vocab, imap);
    CHECK(segs.size() == 3);
    CHECK(segs[2].first.start_s == doctest::Approx(10.24));
  }

  TEST_CASE("note crossing the boundary: On in segment 0, tie + Off in segment 1") {
    std::vector<TimedNote> notes = {note(5.0, 5.3, 60, 0)};
    auto segs = split_track(notes, vocab, imap);
    REQUIRE(segs.size() == 2);
    auto d0 = decode_segment(segs[0].second, segs[0].first, vocab);
    REQUIRE(d0.notes.size() == 1);
    CHECK(d0.notes[0].onset_s.value() == doctest::Approx(5.0));
    CHECK(d0.notes[0].tie_out());
    auto d1 = decode_segment(segs[1].second, segs[1].first, vocab);
    REQUIRE(d1.tie_section.size() == 1);
    REQUIRE(d1.notes.size() == 1);
    CHECK(d1.notes[0].tie_in());
    CHECK(d1.notes[0].offset_s.value() == doctest::Approx(5.3));
  }

  TEST_CASE("tie set contains exactly the notes sounding across each window start") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      auto notes = random_track(rng, 60, 14.0);
      auto segs = split_track(notes, vocab, imap);
      for (size_t k = 1; k < segs.size(); ++k) {
        auto decoded = decode_segment(segs[k].second, segs[k].first, vocab);
        const int64_t ws = time_to_tick(segs[k].first.start_s);
        std::multiset<std::pair<int, int>> expected;
        for (const auto& n : notes) {
          if (n.is_drum) continue;
          const int64_t qt_on = time_to_tick(n.onset_s);
          const int64_t qt_off = std::max(time_to_tick(*n.offset_s), qt_on + 1);
          if (qt_on < ws && qt_off > ws) expected.insert({n.program, n.pitch});
        }
        std::multiset<std::pair<int, int>> actual(decoded.tie_section.begin(),
                                                  decoded.tie_section.end());
        CHECK(expected == actual);
      }
    }
  }

  TEST_CASE("roundtrip: 100 random single-instrument notes survive encode/decode") {
    // Same-pitch overlaps are excluded: unison voices are ambiguous for any
    // On/Off event vocabulary and resolved FIFO by convention.
    Rng rng(23);
    std::vector<TimedNote> notes;
    std::map<int, double> pitch_end;
    double t = 0.0;
    while (notes.size() < 100) {
      t += std::floor(rng.uniform(0.03, 0.3) * 1000.0) / 1000.0;
      const double dur = std::floor(rng.uniform(0.05, 1.2) * 1000.0) / 1000.0;
      const int pitch = 40 + static_cast<int>(rng.uniform_int(40));
      auto it = pitch_end.find(pitch);
      if (it != pitch_end.end() && t < it->second + 0.025) continue;
      pitch_end[pitch] = t + dur;
      notes.push_back(note(t, t + dur, pitch, 0));
    }
    auto segs = split_track(notes, vocab, imap);
    std::vector<DecodedSegment> decoded;
    std::vector<SegmentWindow> windows;
    for (auto& [w, tokens] : segs) {
      decoded.push_back(decode_segment(tokens, w, vocab));
      windows.push_back(w);
    }
    auto restored = stitch_segments(decoded, windows);
    REQUIRE(restored.size() == notes.size());
    for (size_t i = 0; i < notes.size(); ++i) {
      CHECK(restored[i].pitch == notes[i].pitch);
      CHECK(restored[i].program == notes[i].program);
      CHECK(std::abs(restored[i].onset_s - notes[i].onset_s) <= 0.005 + 1e-9);
      CHECK(std::abs(*restored[i].offset_s - *notes[i].offset_s) <= 0.005 + 1e-9);
    }
  }

  TEST_CASE("token line dump round-trips") {
    TokenSeq tokens = {898, 258, 0, 257, 188, 899};
    CHECK(line_to_tokens(tokens_to_line(tokens)) == tokens);
    CHECK_THROWS_AS(line_to_tokens("12 x 3"), FormatError);
  }
}
