#include "melsynth/dataset.hpp"

#include "melsynth/audio_io.hpp"
#include "melsynth/config.hpp"
#include "melsynth/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

namespace melsynth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Pitch registers per instrument class keep random tracks in plausible
// ranges (basses low, pipes high).
std::pair<int, int> pitch_range_for_class(int cls) {
  switch (cls) {
    case 7:
    case 8:
    case 9:
    case 23: return {32, 55};
    case 12:
    case 13:
    case 22:
    case 29: return {40, 64};
    case 31: return {60, 96};
    default: return {48, 84};
  }
}

const std::vector<int>& candidate_programs() {
  // One representative program per commonly used class.
  static const std::vector<int> programs = {0, 4, 16, 24, 33, 40, 42, 56, 60, 64, 71, 73, 80, 88};
  return programs;
}

}  // namespace

std::vector<TimedNote> make_random_track_notes(const DatasetConfig& cfg, Rng& rng) {
  const double duration = cfg.segments_per_track * cfg.segment_duration_s;
  const int n_instruments =
      cfg.min_instruments +
      static_cast<int>(rng.uniform_int(
          static_cast<uint64_t>(cfg.max_instruments - cfg.min_instruments + 1)));
  std::vector<int> programs;
  for (int i = 0; i < n_instruments; ++i) {
    int p = candidate_programs()[rng.uniform_int(candidate_programs().size())];
    programs.push_back(p);
  }
  const bool with_drums = rng.bernoulli(cfg.drum_probability);

  std::vector<TimedNote> notes;
  // Last end time per (program, pitch) to keep same-voice notes disjoint.
  std::map<std::pair<int, int>, double> voice_end;
  const int target_notes =
      std::max(1, static_cast<int>(std::llround(duration * cfg.notes_per_second)));
  const InstrumentMap& imap = InstrumentMap::builtin();
  for (int i = 0; i < target_notes; ++i) {
    TimedNote n;
    n.program = programs[rng.uniform_int(programs.size())];
    auto [lo, hi] = pitch_range_for_class(imap.class_of(n.program, false));
    n.pitch = lo + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(hi - lo + 1)));
    const double dur = rng.uniform(cfg.min_note_s, cfg.max_note_s);
    // 1 ms resolution, like real-world MIDI timing.
    n.onset_s = std::floor(rng.uniform(0.0, std::max(duration - dur - 0.1, 0.1)) * 1000.0) / 1000.0;
    n.offset_s = n.onset_s + std::floor(dur * 1000.0) / 1000.0;
    auto key = std::make_pair(n.program, n.pitch);
    auto it = voice_end.find(key);
    if (it != voice_end.end() && n.onset_s < it->second + 0.03) continue;  // would overlap
    voice_end[key] = *n.offset_s;
    notes.push_back(n);
  }
  if (with_drums) {
    const int hits = static_cast<int>(duration);
    for (int i = 0; i < hits; ++i) {
      TimedNote n;
      n.is_drum = true;
      n.pitch = rng.bernoulli(0.5) ? 36 : 38;  // kick / snare
      n.onset_s = std::floor(rng.uniform(0.0, duration - 0.3) * 1000.0) / 1000.0;
      notes.push_back(n);
    }
  }
  std::sort(notes.begin(), notes.end(), [](const TimedNote& a, const TimedNote& b) {
    if (a.onset_s != b.onset_s) return a.onset_s < b.onset_s;
    if (a.program != b.program) return a.program < b.program;
    return a.pitch < b.pitch;
  });
  return notes;
}

Dataset make_dataset_from_notes(const DatasetConfig& cfg,
                                const std::vector<std::vector<TimedNote>>& track_notes) {
  cfg.spec.validate();
  Dataset ds;
  ds.config = cfg;
  const Vocabulary vocab;
  const InstrumentMap& imap = InstrumentMap::builtin();
  const int frames_per_segment =
      static_cast<int>(std::llround(cfg.segment_duration_s / cfg.spec.frame_seconds()));
  const auto samples_per_segment =
      static_cast<size_t>(frames_per_segment) * static_cast<size_t>(cfg.spec.hop);

  std::vector<float> all_values;
  for (size_t t = 0; t < track_notes.size(); ++t) {
    TrackData track;
    track.notes = track_notes[t];
    const int num_segments =
        std::max(cfg.segments_per_track,
                 derive_window_count(track.notes, cfg.segment_duration_s));
    OracleSynthConfig synth = cfg.synth;
    synth.seed = mix_seed(cfg.seed, 0x5717 + t);
    const double duration = num_segments * cfg.segment_duration_s;
    track.audio = synthesize_oracle(track.notes, synth, duration);
    track.audio.resize(static_cast<size_t>(num_segments) * samples_per_segment, 0.0f);

    auto windows = encode_windows(track.notes, num_segments, vocab, imap,
                                  cfg.segment_duration_s);
    for (int k = 0; k < num_segments; ++k) {
      std::span<const float> seg_audio(track.audio.data() + k * samples_per_segment,
                                       samples_per_segment);
      MelSpec mel = compute_mel(seg_audio, cfg.spec);
      for (Eigen::Index r = 0; r < mel.values.rows(); ++r)
        for (Eigen::Index c = 0; c < mel.values.cols(); ++c)
          all_values.push_back(mel.values(r, c));
      track.segment_mels.push_back(std::move(mel));
      track.segment_tokens.push_back(windows[static_cast<size_t>(k)].second);
    }
    ds.tracks.push_back(std::move(track));
  }

  // Scaling constants from corpus percentiles.
  if (all_values.empty()) throw ValueError("make_dataset: empty corpus");
  std::sort(all_values.begin(), all_values.end());
  auto at_pct = [&](double p) {
    const auto idx = static_cast<size_t>(p * (all_values.size() - 1));
    return all_values[idx];
  };
  ds.scale_lo = at_pct(cfg.lo_percentile);
  ds.scale_hi = at_pct(cfg.hi_percentile);
  if (!(ds.scale_lo < ds.scale_hi)) {
    // Degenerate corpus (e.g. all silence); widen so scaling stays affine.
    ds.scale_lo = all_values.front() - 1.0f;
    ds.scale_hi = all_values.back() + 1.0f;
  }

  // Cut into examples; the context channel is the previous target.
  uint64_t hash = kFnvOffset;
  for (size_t t = 0; t < ds.tracks.size(); ++t) {
    TrackData& track = ds.tracks[t];
    for (size_t k = 0; k < track.segment_mels.size(); ++k) {
      SegmentExample ex;
      ex.track_id = static_cast<int>(t);
      ex.segment_index = static_cast<int>(k);
      ex.tokens = track.segment_tokens[k];
      ex.target = scale_to_model_range(track.segment_mels[k], ds.scale_lo, ds.scale_hi).values;
      ex.context = k == 0 ? MatF::Zero(ex.target.rows(), ex.target.cols())
                          : scale_to_model_range(track.segment_mels[k - 1], ds.scale_lo,
                                                 ds.scale_hi)
                                .values;
      for (int tok : ex.tokens) {
        const auto v = static_cast<uint32_t>(tok);
        hash = fnv1a64(std::span(reinterpret_cast<const uint8_t*>(&v), 4), hash);
      }
      hash = fnv1a64_mat(ex.target, hash);
      ds.examples.push_back(std::move(ex));
    }
  }
  ds.content_hash = hash;
  return ds;
}

Dataset make_dataset(const DatasetConfig& cfg) {
  Rng rng(cfg.seed);
  std::vector<std::vector<TimedNote>> tracks;
  for (int t = 0; t < cfg.n_tracks; ++t) {
    Rng track_rng = rng.child(static_cast<uint64_t>(t) + 1);
    tracks.push_back(make_random_track_notes(cfg, track_rng));
  }
  return make_dataset_from_notes(cfg, tracks);
}

std::string notes_to_json(std::span<const TimedNote> notes) {
  json out;
  out["schema_version"] = 1;
  json arr = json::array();
  for (const TimedNote& n : notes) {
    json jn{{"onset_s", n.onset_s}, {"pitch", n.pitch}, {"program", n.program},
            {"is_drum", n.is_drum}};
    if (n.offset_s) jn["offset_s"] = *n.offset_s;
    arr.push_back(std::move(jn));
  }
  out["notes"] = std::move(arr);
  return out.dump(2);
}

std::vector<TimedNote> notes_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("notes json: ") + e.what());
  }
  std::vector<TimedNote> notes;
  try {
    for (const auto& jn : j.at("notes")) {
      TimedNote n;
      n.onset_s = jn.at("onset_s");
      n.pitch = jn.at("pitch");
      n.program = jn.value("program", 0);
      n.is_drum = jn.value("is_drum", false);
      if (jn.contains("offset_s") && !jn.at("offset_s").is_null())
        n.offset_s = jn.at("offset_s").get<double>();
      notes.push_back(n);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("notes json: ") + e.what());
  }
  return notes;
}

std::vector<TimedNote> load_notes_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("notes json not found: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return notes_from_json(text);
}

namespace {

std::string track_dir_name(int t) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "t%04d", t);
  return buf;
}

std::string seg_name(int k, const char* suffix) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "seg%03d.%s", k, suffix);
  return buf;
}

}  // namespace

void save_dataset(const std::string& dir, const Dataset& ds) {
  fs::create_directories(fs::path(dir) / "tracks");
  json manifest;
  manifest["schema_version"] = 1;
  manifest["seed"] = ds.config.seed;
  manifest["n_tracks"] = static_cast<int>(ds.tracks.size());
  manifest["segment_duration_s"] = ds.config.segment_duration_s;
  manifest["scale_lo"] = ds.scale_lo;
  manifest["scale_hi"] = ds.scale_hi;
  manifest["dataset_hash"] = hex64(ds.content_hash);
  json track_list = json::array();
  for (size_t t = 0; t < ds.tracks.size(); ++t)
    track_list.push_back({{"dir", track_dir_name(static_cast<int>(t))},
                          {"segments", static_cast<int>(ds.tracks[t].segment_mels.size())}});
  manifest["tracks"] = std::move(track_list);
  {
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw FileError("cannot write dataset manifest in " + dir);
    out << manifest.dump(2) << "\n";
  }
  for (size_t t = 0; t < ds.tracks.size(); ++t) {
    const TrackData& track = ds.tracks[t];
    fs::path tdir = fs::path(dir) / "tracks" / track_dir_name(static_cast<int>(t));
    fs::create_directories(tdir);
    {
      std::ofstream out(tdir / "notes.json");
      out << notes_to_json(track.notes) << "\n";
    }
    write_wav((tdir / "audio.wav").string(), track.audio, ds.config.spec.sample_rate);
    for (size_t k = 0; k < track.segment_mels.size(); ++k) {
      std::ofstream out(tdir / seg_name(static_cast<int>(k), "tokens.txt"));
      out << tokens_to_line(track.segment_tokens[k]) << "\n";
      write_mel_dump((tdir / seg_name(static_cast<int>(k), "mel")).string(),
                     track.segment_mels[k].values);
    }
  }
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw FileError("dataset manifest not found in " + dir);
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw FormatError(dir + "/manifest.json: " + e.what());
  }
  Dataset ds;
  ds.config.seed = manifest.at("seed");
  ds.config.segment_duration_s = manifest.at("segment_duration_s");
  ds.scale_lo = manifest.at("scale_lo");
  ds.scale_hi = manifest.at("scale_hi");
  ds.content_hash = std::stoull(manifest.at("dataset_hash").get<std::string>(), nullptr, 16);

  for (const auto& tj : manifest.at("tracks")) {
    TrackData track;
    fs::path tdir = fs::path(dir) / "tracks" / tj.at("dir").get<std::string>();
    track.notes = load_notes_json((tdir / "notes.json").string());
    track.audio = read_wav((tdir / "audio.wav").string(), ds.config.spec.sample_rate);
    const int segments = tj.at("segments");
    for (int k = 0; k < segments; ++k) {
      std::ifstream tin(tdir / seg_name(k, "tokens.txt"));
      if (!tin) throw FileError("missing tokens for segment " + std::to_string(k) + " in " + dir);
      std::string line;
      std::getline(tin, line);
      track.segment_tokens.push_back(line_to_tokens(line));
      MelSpec mel;
      mel.values = read_mel_dump((tdir / seg_name(k, "mel")).string());
      track.segment_mels.push_back(std::move(mel));
    }
    ds.tracks.push_back(std::move(track));
  }
  for (size_t t = 0; t < ds.tracks.size(); ++t) {
    TrackData& track = ds.tracks[t];
    for (size_t k = 0; k < track.segment_mels.size(); ++k) {
      SegmentExample ex;
      ex.track_id = static_cast<int>(t);
      ex.segment_index = static_cast<int>(k);
      ex.tokens = track.segment_tokens[k];
      ex.target = scale_to_model_range(track.segment_mels[k], ds.scale_lo, ds.scale_hi).values;
      ex.context = k == 0 ? MatF::Zero(ex.target.rows(), ex.target.cols())
                          : scale_to_model_range(track.segment_mels[k - 1], ds.scale_lo,
                                                 ds.scale_hi)
                                .values;
      ds.examples.push_back(std::move(ex));
    }
  }
  return ds;
}

DatasetConfig dataset_config_from_kv(const KvConfig& kv) {
  DatasetConfig cfg;
  cfg.n_tracks = static_cast<int>(kv.get_int("dataset.n_tracks", cfg.n_tracks));
  cfg.segments_per_track =
      static_cast<int>(kv.get_int("dataset.segments_per_track", cfg.segments_per_track));
  cfg.seed = static_cast<uint64_t>(kv.get_int("dataset.seed", static_cast<int64_t>(cfg.seed)));
  cfg.min_instruments = static_cast<int>(kv.get_int("dataset.min_instruments", cfg.min_instruments));
  cfg.max_instruments = static_cast<int>(kv.get_int("dataset.max_instruments", cfg.max_instruments));
  cfg.notes_per_second = kv.get_double("dataset.notes_per_second", cfg.notes_per_second);
  cfg.drum_probability = kv.get_double("dataset.drum_probability", cfg.drum_probability);
  return cfg;
}

}  // namespace melsynth
