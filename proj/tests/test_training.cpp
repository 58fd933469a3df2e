#include "melsynth/training.hpp"

#include "melsynth/audio_io.hpp"
#include "melsynth/oracle_synth.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <filesystem>

using namespace melsynth;
using namespace melsynth::testing;

namespace {

ModelConfig overfit_config(DecoderMode mode = DecoderMode::kDiffusion) {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.head_dim = 8;
  cfg.mlp_dim = 32;
  cfg.embed_dim = 16;
  cfg.mode = mode;
  cfg.use_context = true;
  cfg.max_note_positions = 64;
  cfg.context_positions = 16;
  cfg.decoder_positions = 16;
  cfg.mel_bins = 8;
  cfg.init_seed = 31;
  return cfg;
}

// Matching miniature dataset: 16-frame segments of an 8-bin mel.
Dataset tiny_dataset(int tracks = 2) {
  DatasetConfig cfg;
  cfg.n_tracks = tracks;
  cfg.segments_per_track = 2;
  cfg.seed = 5;
  cfg.segment_duration_s = 0.32;  // 16 frames at 20 ms
  cfg.max_note_s = 0.25;
  cfg.min_note_s = 0.08;
  cfg.notes_per_second = 3.0;
  cfg.drum_probability = 0.0;
  cfg.spec.mel_bins = 8;
  return make_dataset(cfg);
}

}  // namespace

TEST_SUITE("oracle_synth") {
  TEST_CASE("no notes produce silence") {
    auto audio = synthesize_oracle({}, OracleSynthConfig::defaults(), 1.0);
    CHECK(audio.size() == 16000);
    for (float s : audio) CHECK(s == 0.0f);
  }

  TEST_CASE("an A4 pipe note peaks at 440 Hz in the spectrum") {
    // Class 31 (pipe) is the most sine-like timbre: 2 harmonics.
    std::vector<TimedNote> notes = {note(0.1, 1.4, 69, 73)};
    auto cfg = OracleSynthConfig::defaults();
    cfg.timbres[31].vibrato_hz = 0.0;
    cfg.timbres[31].noise_level = 0.0;
    auto audio = synthesize_oracle(notes, cfg, 1.5);
    const int n = 16384;
    Eigen::FFT<float> fft;
    std::vector<std::complex<float>> spec;
    std::vector<float> window(audio.begin() + 3200, audio.begin() + 3200 + n);
    fft.fwd(spec, window);
    int argmax = 0;
    float best = 0.0f;
    for (int k = 1; k < n / 2; ++k)
      if (std::abs(spec[static_cast<size_t>(k)]) > best) {
        best = std::abs(spec[static_cast<size_t>(k)]);
        argmax = k;
      }
    const double peak_hz = static_cast<double>(argmax) * 16000.0 / n;
    CHECK(peak_hz == doctest::Approx(440.0).epsilon(0.01));
  }

  TEST_CASE("disjoint notes mix linearly") {
    std::vector<TimedNote> both = {note(0.1, 0.4, 60, 0), note(1.0, 1.3, 60, 0)};
    std::vector<TimedNote> first = {both[0]}, second = {both[1]};
    auto cfg = OracleSynthConfig::defaults();
    auto a = synthesize_oracle(first, cfg, 2.0);
    auto b = synthesize_oracle(second, cfg, 2.0);
    auto ab = synthesize_oracle(both, cfg, 2.0);
    REQUIRE(a.size() == ab.size());
    double max_err = 0.0;
    for (size_t i = 0; i < ab.size(); ++i)
      max_err = std::max(max_err, std::abs(static_cast<double>(ab[i]) - (a[i] + b[i])));
    CHECK(max_err < 1e-6);
  }

  TEST_CASE("same seed renders identical audio") {
    Rng rng(1);
    auto notes = random_track(rng, 12, 2.0);
    auto cfg = OracleSynthConfig::defaults();
    auto a = synthesize_oracle(notes, cfg, 2.5);
    auto b = synthesize_oracle(notes, cfg, 2.5);
    CHECK(a == b);
  }

  TEST_CASE("drum hits are finite and bounded") {
    std::vector<TimedNote> notes = {drum(0.1, 36), drum(0.5, 38)};
    auto audio = synthesize_oracle(notes, OracleSynthConfig::defaults(), 1.0);
    float peak = 0.0f;
    for (float s : audio) {
      CHECK(std::isfinite(s));
      peak = std::max(peak, std::abs(s));
    }
    CHECK(peak > 0.0f);
    CHECK(peak <= 0.5f + 1e-6f);
  }
}

TEST_SUITE("dataset") {
  TEST_CASE("fixed seed gives identical dataset hashes") {
    auto a = tiny_dataset();
    auto b = tiny_dataset();
    CHECK(a.content_hash == b.content_hash);
    DatasetConfig other;
    other.n_tracks = 2;
    other.segments_per_track = 2;
    other.seed = 6;
    other.segment_duration_s = 0.32;
    other.spec.mel_bins = 8;
    CHECK(make_dataset(other).content_hash != a.content_hash);
  }

  TEST_CASE("every example target has the per-segment frame count") {
    auto ds = tiny_dataset();
    REQUIRE(ds.examples.size() == 4);
    for (const auto& ex : ds.examples) {
      CHECK(ex.target.rows() == 16);
      CHECK(ex.target.cols() == 8);
      CHECK(ex.target.minCoeff() >= -1.0f);
      CHECK(ex.target.maxCoeff() <= 1.0f);
    }
  }

  TEST_CASE("context equals the previous segment's target; track-initial context is zero") {
    auto ds = tiny_dataset(3);
    int nonzero_context = 0;
    for (const auto& ex : ds.examples) {
      if (ex.segment_index == 0) {
        CHECK(ex.context.cwiseAbs().maxCoeff() == 0.0f);
        continue;
      }
      ++nonzero_context;
      for (const auto& prev : ds.examples)
        if (prev.track_id == ex.track_id && prev.segment_index == ex.segment_index - 1)
          CHECK((ex.context - prev.target).cwiseAbs().maxCoeff() == 0.0f);
    }
    // fraction with nonzero context = 1 - tracks/segments
    CHECK(nonzero_context == static_cast<int>(ds.examples.size()) - 3);
  }

  TEST_CASE("disk roundtrip preserves examples and scaling") {
    namespace fs = std::filesystem;
    auto ds = tiny_dataset();
    const auto dir = (fs::temp_directory_path() / "melsynth_ds_test").string();
    fs::remove_all(dir);
    save_dataset(dir, ds);
    auto back = load_dataset(dir);
    CHECK(back.scale_lo == ds.scale_lo);
    CHECK(back.scale_hi == ds.scale_hi);
    CHECK(back.content_hash == ds.content_hash);
    REQUIRE(back.examples.size() == ds.examples.size());
    for (size_t i = 0; i < ds.examples.size(); ++i) {
      CHECK(back.examples[i].tokens == ds.examples[i].tokens);
      CHECK((back.examples[i].target - ds.examples[i].target).cwiseAbs().maxCoeff() == 0.0f);
    }
    fs::remove_all(dir);
  }

  TEST_CASE("notes json roundtrip") {
    std::vector<TimedNote> notes = {note(0.5, 1.25, 60, 40), drum(2.0, 36)};
    auto back = notes_from_json(notes_to_json(notes));
    REQUIRE(back.size() == 2);
    CHECK(back[0].offset_s.value() == doctest::Approx(1.25));
    CHECK(back[1].is_drum);
    CHECK_FALSE(back[1].offset_s.has_value());
    CHECK_THROWS_AS(notes_from_json("{bad json"), FormatError);
  }
}

TEST_SUITE("training") {
  TEST_CASE("two steps with identical rng and inputs update identically") {
    auto ds = tiny_dataset();
    std::vector<const SegmentExample*> batch = {&ds.examples[0], &ds.examples[1]};
    auto run = [&](int threads) {
      TransformerF model(overfit_config());
      Adam opt(1e-3);
      opt.init(model.params());
      Rng rng(77);
      train_step_diffusion(model, opt, batch, 0.1, rng, threads);
      Rng rng2(78);
      train_step_diffusion(model, opt, batch, 0.1, rng2, threads);
      uint64_t h = kFnvOffset;
      for (const auto& p : model.params()) h = fnv1a64_mat(p.value, h);
      return h;
    };
    CHECK(run(1) == run(1));
    // Thread count does not change the arithmetic.
    CHECK(run(1) == run(2));
  }

  TEST_CASE("full conditioning dropout leaves note-encoder gradients empty") {
    auto ds = tiny_dataset();
    std::vector<const SegmentExample*> batch = {&ds.examples[0], &ds.examples[1]};
    TransformerF model(overfit_config());
    Rng rng(79);
    StepResult r = diffusion_step_gradients(model, batch, 1.0, rng, 1);
    const auto& params = model.params();
    bool saw_note_param = false;
    for (size_t i = 0; i < params.size(); ++i) {
      if (params[i].name.rfind("note_enc", 0) == 0 || params[i].name == "token_embed") {
        saw_note_param = true;
        CHECK(r.grads[i].size() == 0);  // exactly zero: never touched
      }
    }
    CHECK(saw_note_param);
    // The null embeddings do receive gradient.
    CHECK(r.grads[static_cast<size_t>(model.param_index("null_note"))].size() > 0);
  }

  TEST_CASE("conditioning dropout rate is honored empirically") {
    Rng rng(80);
    int nulls = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i)
      if (rng.bernoulli(0.1)) ++nulls;
    const double rate = static_cast<double>(nulls) / n;
    CHECK(std::abs(rate - 0.1) < 0.01);
  }

  TEST_CASE("autoregressive loss matches brute force and the zero-predictor identity") {
    auto ds = tiny_dataset();
    std::vector<const SegmentExample*> batch = {&ds.examples[0]};
    auto cfg = overfit_config(DecoderMode::kAutoregressive);
    TransformerF model(cfg);
    for (auto& p : model.mutable_params())
      if (p.name.find("norm") == std::string::npos) p.value.setZero();
    StepResult r = autoregressive_step_gradients(model, batch, 1);
    const double expect = ds.examples[0].target.cast<double>().array().square().mean();
    CHECK(r.loss == doctest::Approx(expect).epsilon(1e-6));

    // Brute-force MSE against the model's actual predictions.
    TransformerF fresh(cfg);
    auto bundle = fresh.make_conditioning(ds.examples[0].tokens, &ds.examples[0].context, false);
    MatF pred = fresh.ar_predict(ds.examples[0].target, bundle);
    double brute = 0.0;
    for (Eigen::Index i = 0; i < pred.rows(); ++i)
      for (Eigen::Index j = 0; j < pred.cols(); ++j)
        brute += std::pow(static_cast<double>(pred(i, j)) - ds.examples[0].target(i, j), 2);
    brute /= static_cast<double>(pred.size());
    StepResult r2 = autoregressive_step_gradients(fresh, batch, 1);
    CHECK(r2.loss == doctest::Approx(brute).epsilon(1e-5));
  }

  TEST_CASE("short diffusion overfit decreases the loss") {
    auto ds = tiny_dataset();
    TrainConfig tcfg;
    tcfg.steps = 60;
    tcfg.batch_size = 2;
    tcfg.seed = 3;
    tcfg.log_every = 10;
    tcfg.threads = 2;
    auto result = train(overfit_config(), tcfg, ds);
    REQUIRE(result.log.size() >= 2);
    CHECK(result.log.back().loss < result.log.front().loss);
  }

  TEST_CASE("loss log row count follows steps / log_every") {
    auto ds = tiny_dataset();
    TrainConfig tcfg;
    tcfg.steps = 40;
    tcfg.batch_size = 1;
    tcfg.log_every = 10;
    tcfg.seed = 4;
    auto result = train(overfit_config(), tcfg, ds);
    CHECK(result.log.size() == 4);
  }

  TEST_CASE("training resumes bit-compatibly from a checkpoint") {
    namespace fs = std::filesystem;
    auto ds = tiny_dataset();
    TrainConfig tcfg;
    tcfg.steps = 30;
    tcfg.batch_size = 2;
    tcfg.seed = 9;
    tcfg.log_every = 30;
    auto full = train(overfit_config(), tcfg, ds);

    TrainConfig half = tcfg;
    half.steps = 15;
    auto first = train(overfit_config(), half, ds);
    auto resumed = train(overfit_config(), tcfg, ds, &first.checkpoint);

    CHECK(resumed.final_loss == doctest::Approx(full.final_loss).epsilon(1e-12));
    uint64_t ha = kFnvOffset, hb = kFnvOffset;
    for (const auto& p : full.checkpoint.params) ha = fnv1a64_mat(p.value, ha);
    for (const auto& p : resumed.checkpoint.params) hb = fnv1a64_mat(p.value, hb);
    CHECK(ha == hb);

    // Resuming with a different seed is rejected.
    TrainConfig other = tcfg;
    other.seed = 10;
    CHECK_THROWS_AS(train(overfit_config(), other, ds, &first.checkpoint), VersionError);
  }

  TEST_CASE("checkpoint save/load roundtrip preserves everything") {
    namespace fs = std::filesystem;
    auto ds = tiny_dataset();
    TrainConfig tcfg;
    tcfg.steps = 5;
    tcfg.batch_size = 1;
    tcfg.seed = 12;
    auto result = train(overfit_config(), tcfg, ds);
    const auto path = (fs::temp_directory_path() / "melsynth_ckpt_test.msck").string();
    save_checkpoint(path, result.checkpoint);
    Checkpoint back = load_checkpoint(path);
    CHECK(back.scale_lo == result.checkpoint.scale_lo);
    CHECK(back.vocab_hash == result.checkpoint.vocab_hash);
    REQUIRE(back.params.size() == result.checkpoint.params.size());
    for (size_t i = 0; i < back.params.size(); ++i) {
      CHECK(back.params[i].name == result.checkpoint.params[i].name);
      CHECK((back.params[i].value - result.checkpoint.params[i].value).cwiseAbs().maxCoeff() ==
            0.0f);
    }
    REQUIRE(back.train_state.has_value());
    CHECK(back.train_state->step == 5);
    CHECK(load_checkpoint_checked(path, back.vocab_hash).params.size() == back.params.size());
    CHECK_THROWS_AS(load_checkpoint_checked(path, back.vocab_hash + 1), VersionError);
    fs::remove(path);
  }
}
