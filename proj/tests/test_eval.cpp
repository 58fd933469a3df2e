#include "melsynth/eval.hpp"

#include "melsynth/audio_io.hpp"
#include "melsynth/oracle_synth.hpp"
#include "melsynth/training.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

using namespace melsynth;
using namespace melsynth::testing;

TEST_SUITE("recon_distance") {
  TEST_CASE("identical embeddings give zero") {
    Rng rng(1);
    MatF e = rng.normal_mat<float>(10, 6);
    CHECK(recon_distance(e, e) == doctest::Approx(0.0));
  }

  TEST_CASE("a single frame with difference (3, 4) gives 5") {
    MatF a(1, 2), b(1, 2);
    a << 1.0f, 2.0f;
    b << 4.0f, 6.0f;
    CHECK(recon_distance(a, b) == doctest::Approx(5.0));
  }

  TEST_CASE("frames average: norms 5 and 1 give 3") {
    MatF a(2, 2), b(2, 2);
    a << 0.0f, 0.0f, 0.0f, 0.0f;
    b << 3.0f, 4.0f, 1.0f, 0.0f;
    CHECK(recon_distance(a, b) == doctest::Approx(3.0));
  }

  TEST_CASE("scaling the difference scales the distance") {
    Rng rng(2);
    MatF a = rng.normal_mat<float>(8, 5);
    MatF d = rng.normal_mat<float>(8, 5);
    const double base = recon_distance(a, a + d);
    MatF scaled = a + 2.5f * d;
    CHECK(recon_distance(a, scaled) == doctest::Approx(2.5 * base).epsilon(1e-5));
  }

  TEST_CASE("frame mismatch truncates with warning; dim mismatch throws") {
    Rng rng(3);
    MatF a = rng.normal_mat<float>(10, 4), b = rng.normal_mat<float>(7, 4);
    Warnings w;
    recon_distance(a, b, &w);
    CHECK(!w.empty());
    MatF c = rng.normal_mat<float>(10, 5);
    CHECK_THROWS_AS(recon_distance(a, c), ValueError);
  }
}

TEST_SUITE("fad") {
  TEST_CASE("identical sets give zero within 1e-6") {
    Rng rng(4);
    MatF e = rng.normal_mat<float>(500, 4);
    CHECK(fad(e, e) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(fad(e, e) < 1e-6);
  }

  TEST_CASE("1-D Gaussians N(0,1) vs N(1,4): analytic value 2 within 0.1 at n=1e5") {
    // Closed form: (mu1-mu2)^2 + (s1 - s2)^2 = 1 + 1 = 2.
    Rng rng(5);
    const int n = 100000;
    MatF a(n, 1), b(n, 1);
    for (int i = 0; i < n; ++i) {
      a(i, 0) = static_cast<float>(rng.normal());
      b(i, 0) = static_cast<float>(1.0 + 2.0 * rng.normal());
    }
    CHECK(fad(a, b) == doctest::Approx(2.0).epsilon(0.05));
    CHECK(std::abs(fad(a, b) - 2.0) < 0.1);
  }

  TEST_CASE("fad is symmetric to 1e-9 and non-negative") {
    Rng rng(6);
    MatF a = rng.normal_mat<float>(300, 3);
    MatF b = (rng.normal_mat<float>(260, 3).array() * 1.6f + 0.4f).matrix();
    const double ab = fad(a, b), ba = fad(b, a);
    CHECK(std::abs(ab - ba) < 1e-9);
    CHECK(ab >= 0.0);
  }

  TEST_CASE("permuting frames leaves fad unchanged") {
    Rng rng(7);
    MatF a = rng.normal_mat<float>(64, 3), b = rng.normal_mat<float>(64, 3);
    const double base = fad(a, b);
    MatF shuffled = b;
    for (Eigen::Index i = b.rows() - 1; i > 0; --i) {
      const auto j = static_cast<Eigen::Index>(rng.uniform_int(static_cast<uint64_t>(i + 1)));
      shuffled.row(i).swap(shuffled.row(j));
    }
    CHECK(fad(a, shuffled) == doctest::Approx(base).epsilon(1e-9));
  }

  TEST_CASE("rank-deficient covariance regularizes with a warning") {
    Rng rng(8);
    MatF a = rng.normal_mat<float>(3, 8);  // fewer frames than dims
    MatF b = rng.normal_mat<float>(3, 8);
    Warnings w;
    const double v = fad(a, b, 1e-6, &w);
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
    CHECK(!w.empty());
  }
}

TEST_SUITE("note_f1") {
  TEST_CASE("exact match gives F1 = 1") {
    std::vector<TimedNote> ref = {note(0.0, 1.0, 60, 0), note(1.5, 2.0, 64, 40), drum(0.5, 36)};
    auto r = note_f1(ref, ref);
    CHECK(r.f1 == doctest::Approx(1.0));
    CHECK(r.precision == doctest::Approx(1.0));
    CHECK(r.recall == doctest::Approx(1.0));
  }

  TEST_CASE("a +60 ms onset shift breaks the match") {
    std::vector<TimedNote> ref = {note(1.0, 2.0, 60, 0)};
    std::vector<TimedNote> est = {note(1.06, 2.06, 60, 0)};
    auto r = note_f1(ref, est);
    CHECK(r.f1 == doctest::Approx(0.0));
  }

  TEST_CASE("offset tolerance is max(0.2 * ref_duration, 50 ms)") {
    // 1.0 s reference: 0.15 s offset error < 0.2 s tolerance -> match.
    std::vector<TimedNote> ref = {note(1.0, 2.0, 60, 0)};
    std::vector<TimedNote> est = {note(1.0, 2.15, 60, 0)};
    CHECK(note_f1(ref, est).f1 == doctest::Approx(1.0));
    // 0.25 s error on the same note -> no match.
    est = {note(1.0, 2.25, 60, 0)};
    CHECK(note_f1(ref, est).f1 == doctest::Approx(0.0));
    // Short 0.1 s note: tolerance floor of 50 ms applies.
    ref = {note(1.0, 1.1, 60, 0)};
    est = {note(1.0, 1.14, 60, 0)};
    CHECK(note_f1(ref, est).f1 == doctest::Approx(1.0));
  }

  TEST_CASE("program must match exactly") {
    std::vector<TimedNote> ref = {note(0.0, 1.0, 60, 0)};
    std::vector<TimedNote> est = {note(0.0, 1.0, 60, 1)};
    CHECK(note_f1(ref, est).f1 == doctest::Approx(0.0));
  }

  TEST_CASE("drums match on onset and identity only") {
    std::vector<TimedNote> ref = {drum(1.0, 36)};
    std::vector<TimedNote> est = {drum(1.04, 36)};
    CHECK(note_f1(ref, est).f1 == doctest::Approx(1.0));
    est = {drum(1.04, 38)};
    CHECK(note_f1(ref, est).f1 == doctest::Approx(0.0));
    est = {note(1.0, 1.2, 36, 0)};
    CHECK(note_f1(ref, est).f1 == doctest::Approx(0.0));
  }

  TEST_CASE("permutation invariance and the unmatched-note penalty") {
    Rng rng(9);
    auto ref = random_track(rng, 20, 5.0);
    auto est = ref;
    for (size_t i = est.size(); i > 1; --i) std::swap(est[i - 1], est[rng.uniform_int(i)]);
    CHECK(note_f1(ref, est).f1 == doctest::Approx(1.0));

    const double precision_before = note_f1(ref, est).precision;
    est.push_back(note(4.9, 5.0, 127, 88));  // cannot match anything
    auto r = note_f1(ref, est);
    CHECK(r.precision < precision_before);
    CHECK(r.recall == doctest::Approx(1.0));
  }

  TEST_CASE("both-empty convention scores zero") {
    auto r = note_f1({}, {});
    CHECK(r.f1 == doctest::Approx(0.0));
    CHECK(r.precision == doctest::Approx(0.0));
  }

  TEST_CASE("optimal matching can beat greedy on adversarial overlaps") {
    // Two refs at 0.00 and 0.04; greedy gives est@0.04 the first ref, but
    // both assignments are feasible either way, so counts agree here; check
    // the flag at least produces the same (maximal) count.
    std::vector<TimedNote> ref = {note(0.00, 1.00, 60, 0), note(0.04, 1.04, 60, 0)};
    std::vector<TimedNote> est = {note(0.04, 1.00, 60, 0), note(0.08, 1.06, 60, 0)};
    F1Options greedy;
    F1Options optimal;
    optimal.optimal_matching = true;
    CHECK(note_f1(ref, est, optimal).matches >= note_f1(ref, est, greedy).matches);
  }
}

TEST_SUITE("evaluate") {
  TEST_CASE("ground truth against itself scores recon 0 and fad 0") {
    Rng rng(10);
    auto notes = random_track(rng, 10, 3.0, 2, false);
    auto audio = synthesize_oracle(notes, OracleSynthConfig::defaults(), 3.0);
    MelStatsEmbedder embedder;
    EvalPair pair;
    pair.ref_audio = audio;
    pair.test_audio = audio;
    auto report = evaluate_pairs({&pair, 1}, embedder);
    CHECK(report.recon == doctest::Approx(0.0));
    CHECK(report.fad == doctest::Approx(0.0).epsilon(1e-6));
    CHECK_FALSE(report.transcription_f1.has_value());
  }

  TEST_CASE("oracle transcription of oracle audio scores F1 = 1") {
    Rng rng(11);
    auto notes = random_track(rng, 8, 2.0, 1, false);
    auto audio = synthesize_oracle(notes, OracleSynthConfig::defaults(), 2.0);
    MelStatsEmbedder embedder;
    EvalPair pair;
    pair.ref_audio = audio;
    pair.test_audio = audio;
    pair.ref_notes = &notes;
    pair.est_notes = &notes;  // a perfect transcriber
    auto report = evaluate_pairs({&pair, 1}, embedder);
    REQUIRE(report.transcription_f1.has_value());
    CHECK(*report.transcription_f1 == doctest::Approx(1.0));
  }

  TEST_CASE("report JSON carries the four metric roles and schema version") {
    Rng rng(12);
    auto notes = random_track(rng, 6, 2.0, 1, false);
    auto audio = synthesize_oracle(notes, OracleSynthConfig::defaults(), 2.0);
    MelStatsEmbedder embedder;
    EvalPair pair;
    pair.ref_audio = audio;
    pair.test_audio = audio;
    pair.render_wall_s = 1.0;
    pair.ref_notes = &notes;
    pair.est_notes = &notes;
    auto report = evaluate_pairs({&pair, 1}, embedder);
    auto j = nlohmann::json::parse(report.to_json());
    CHECK(j.contains("recon"));
    CHECK(j.contains("fad"));
    CHECK(j.contains("transcription_f1"));
    CHECK(j.contains("rt_factor"));
    CHECK(j.contains("precision"));
    CHECK(j.contains("recall"));
    CHECK(j.at("schema_version") == 1);
    CHECK(j.at("rt_factor").get<double>() == doctest::Approx(2.0));  // 2 s audio, 1 s wall
  }

  TEST_CASE("audio truncation helper keeps the first 10 minutes") {
    std::vector<float> audio(16000 * 700, 0.1f);
    auto cut = truncate_audio(audio, 600.0, 16000);
    CHECK(cut.size() == 16000u * 600u);
    std::vector<float> small(100, 0.1f);
    CHECK(truncate_audio(small, 600.0, 16000).size() == 100);
  }

  TEST_CASE("external transcriber plugs in through a command") {
    namespace fs = std::filesystem;
    Rng rng(13);
    auto notes = random_track(rng, 5, 2.0, 1, false);
    const auto dir = fs::temp_directory_path() / "melsynth_eval_test";
    fs::create_directories(dir);
    const auto notes_path = dir / "notes.json";
    {
      std::ofstream out(notes_path);
      out << notes_to_json(notes);
    }
    const auto script = dir / "oracle_transcriber.sh";
    {
      std::ofstream out(script);
      out << "#!/bin/sh\ncp '" << notes_path.string() << "' \"$2\"\n";
    }
    fs::permissions(script, fs::perms::owner_all);
    const auto wav = dir / "in.wav";
    {
      std::vector<float> silence(16000, 0.0f);
      write_wav(wav.string(), silence);
    }
    ExternalTranscriber transcriber{script.string()};
    auto est = transcriber.transcribe(wav.string(), dir.string());
    REQUIRE(est.size() == notes.size());
    CHECK(note_f1(notes, est).f1 == doctest::Approx(1.0));
    fs::remove_all(dir);
  }

  TEST_CASE("end-to-end evaluate on a tiny checkpoint produces finite metrics") {
    DatasetConfig dcfg;
    dcfg.n_tracks = 1;
    dcfg.segments_per_track = 2;
    dcfg.seed = 5;
    dcfg.segment_duration_s = 1.28;  // 64 frames so the 1 s embedder has blocks
    dcfg.spec.mel_bins = 128;
    dcfg.drum_probability = 0.0;
    auto ds = make_dataset(dcfg);

    ModelConfig mcfg;
    mcfg.num_layers = 1;
    mcfg.num_heads = 2;
    mcfg.head_dim = 8;
    mcfg.mlp_dim = 32;
    mcfg.embed_dim = 16;
    mcfg.use_context = true;
    mcfg.max_note_positions = 128;
    mcfg.context_positions = 64;
    mcfg.decoder_positions = 64;
    mcfg.mel_bins = 128;
    mcfg.init_seed = 51;

    TrainConfig tcfg;
    tcfg.steps = 3;
    tcfg.batch_size = 1;
    tcfg.seed = 52;
    auto ckpt = train(mcfg, tcfg, ds).checkpoint;

    EvalOptions opts;
    opts.render.num_steps = 4;
    opts.render.guidance_weight = 1.0;
    opts.render.vocoder_iters = 2;
    MelStatsEmbedder embedder;
    auto report = evaluate(ckpt, ds, embedder, opts);
    CHECK(std::isfinite(report.recon));
    CHECK(report.recon >= 0.0);
    CHECK(std::isfinite(report.fad));
    CHECK(report.fad >= 0.0);
    CHECK(report.rt > 0.0);
    REQUIRE(report.per_example.size() == 1);
  }
}
