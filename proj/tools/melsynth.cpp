#include "melsynth/audio_io.hpp"
#include "melsynth/checkpoint.hpp"
#include "melsynth/config.hpp"
#include "melsynth/dataset.hpp"
#include "melsynth/eval.hpp"
#include "melsynth/image.hpp"
#include "melsynth/manifest.hpp"
#include "melsynth/render.hpp"
#include "melsynth/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace melsynth;

namespace {

// Distinct exit codes per failure class.
constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitMissingFile = 3;
constexpr int kExitVersion = 4;
constexpr int kExitFormat = 5;

RunManifest base_manifest(const std::string& command, int argc, char** argv) {
  RunManifest m;
  m.command = command;
  for (int i = 0; i < argc; ++i) m.argv.emplace_back(argv[i]);
  m.timestamp = RunManifest::now_iso8601();
  return m;
}

KvConfig load_kv(const std::string& path) {
  return path.empty() ? KvConfig() : KvConfig::from_file(path);
}

int cmd_dataset(const std::string& config_path, const std::string& out_dir, int64_t seed_override,
                int argc, char** argv) {
  KvConfig kv = load_kv(config_path);
  DatasetConfig cfg = dataset_config_from_kv(kv);
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
  Dataset ds = make_dataset(cfg);
  save_dataset(out_dir, ds);

  RunManifest m = base_manifest("dataset", argc, argv);
  m.config_echo = kv.values();
  m.seeds["dataset"] = cfg.seed;
  m.write((fs::path(out_dir) / "run_manifest.json").string());
  std::cout << "dataset: " << ds.examples.size() << " examples from " << ds.tracks.size()
            << " tracks, hash " << hex64(ds.content_hash) << "\n"
            << "scale range [" << ds.scale_lo << ", " << ds.scale_hi << "]\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& dataset_dir,
              const std::string& out_dir, const std::string& resume_path, int argc, char** argv) {
  KvConfig kv = load_kv(config_path);
  Dataset ds = load_dataset(dataset_dir);
  TrainConfig tcfg = train_config_from_kv(kv);
  tcfg.out_dir = out_dir;

  ModelConfig mcfg = ModelConfig::preset(kv.get_str("model.preset", "toy"));
  mcfg.mode = decoder_mode_from_string(kv.get_str("model.mode", "diffusion"));
  mcfg.use_context = kv.get_bool("model.use_context", true);
  mcfg.init_seed = static_cast<uint64_t>(kv.get_int("model.init_seed", 1234));

  std::optional<Checkpoint> resume;
  if (!resume_path.empty()) resume = load_checkpoint(resume_path);

  TrainResult result = train(mcfg, tcfg, ds, resume ? &*resume : nullptr);

  RunManifest m = base_manifest("train", argc, argv);
  m.config_echo = kv.values();
  m.seeds["train"] = tcfg.seed;
  m.seeds["model_init"] = mcfg.init_seed;
  m.write((fs::path(out_dir) / "run_manifest.json").string());
  std::cout << "train: " << result.steps_run << " steps, final loss " << result.final_loss
            << "\ncheckpoint: " << (fs::path(out_dir) / "checkpoint_final.msck").string() << "\n";
  return kExitOk;
}

int cmd_render(const std::string& midi_path, const std::string& ckpt_path,
               const std::string& out_dir, const RenderOptions& opts, int argc, char** argv) {
  const Vocabulary vocab;
  Checkpoint ckpt = load_checkpoint_checked(ckpt_path, vocab.layout_hash());
  RenderedTrack track = render_midi_file(midi_path, ckpt, opts);

  fs::create_directories(out_dir);
  write_wav((fs::path(out_dir) / "render.wav").string(), track.audio,
            ckpt.spec_config.sample_rate);
  write_mel_dump((fs::path(out_dir) / "render.mel").string(), track.mel.values);

  nlohmann::json diag;
  diag["num_segments"] = track.num_segments;
  diag["segment_wall_s"] = track.segment_wall_s;
  diag["total_wall_s"] = track.total_wall_s;
  diag["rt_factor"] = track.rt_factor;
  diag["boundary_stats"] = track.boundary_stats;
  diag["mean_boundary_stat"] = track.mean_boundary_stat;
  diag["audio_samples"] = track.audio.size();
  diag["warnings"] = track.warnings;
  {
    std::ofstream out(fs::path(out_dir) / "diagnostics.json");
    out << diag.dump(2) << "\n";
  }
  for (const auto& w : track.warnings) std::cerr << "warning: " << w << "\n";

  RunManifest m = base_manifest("render", argc, argv);
  m.seeds["sampler"] = opts.seed;
  m.config_echo["midi"] = midi_path;
  m.config_echo["checkpoint"] = ckpt_path;
  m.config_echo["steps"] = std::to_string(opts.num_steps);
  m.config_echo["guidance"] = std::to_string(opts.guidance_weight);
  m.config_echo["use_context"] = opts.use_context ? "true" : "false";
  m.write((fs::path(out_dir) / "run_manifest.json").string());
  std::cout << "render: " << track.num_segments << " segments, rt factor " << track.rt_factor
            << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset_dir,
             const std::string& out_dir, const EvalOptions& opts, int argc, char** argv) {
  const Vocabulary vocab;
  Checkpoint ckpt = load_checkpoint_checked(ckpt_path, vocab.layout_hash());
  Dataset ds = load_dataset(dataset_dir);
  auto embedder = make_embedder(opts.embedder, ckpt.spec_config);
  MetricsReport report = evaluate(ckpt, ds, *embedder, opts);

  fs::create_directories(out_dir);
  {
    std::ofstream out(fs::path(out_dir) / "metrics.json");
    out << report.to_json() << "\n";
  }
  RunManifest m = base_manifest("eval", argc, argv);
  m.seeds["sampler"] = opts.render.seed;
  m.config_echo["checkpoint"] = ckpt_path;
  m.config_echo["dataset"] = dataset_dir;
  m.config_echo["embedder"] = opts.embedder;
  m.write((fs::path(out_dir) / "run_manifest.json").string());
  std::cout << "eval: recon " << report.recon << ", fad " << report.fad;
  if (report.transcription_f1) std::cout << ", f1 " << *report.transcription_f1;
  std::cout << ", rt " << report.rt << "\n";
  return kExitOk;
}

int cmd_inspect(const std::string& input, const std::string& out_path, double lo, double hi,
                int argc, char** argv) {
  MatF mel;
  if (input.size() > 4 && input.substr(input.size() - 4) == ".wav") {
    SpecConfig cfg;
    auto audio = read_wav(input, cfg.sample_rate);
    mel = compute_mel(audio, cfg).values;
  } else {
    mel = read_mel_dump(input);
  }
  float flo = static_cast<float>(lo), fhi = static_cast<float>(hi);
  if (!(flo < fhi)) {  // auto range
    flo = mel.minCoeff();
    fhi = mel.maxCoeff();
    if (!(flo < fhi)) fhi = flo + 1.0f;
  }
  write_spectrogram_png(out_path, mel, flo, fhi);
  RunManifest m = base_manifest("inspect", argc, argv);
  m.config_echo["input"] = input;
  m.config_echo["lo"] = std::to_string(flo);
  m.config_echo["hi"] = std::to_string(fhi);
  m.write(out_path + ".manifest.json");
  std::cout << "inspect: " << mel.rows() << "x" << mel.cols() << " -> " << out_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"melsynth: multi-instrument MIDI-to-audio synthesis via spectrogram diffusion"};
  app.require_subcommand(1);

  std::string config_path, out_dir, dataset_dir, ckpt_path, midi_path, resume_path, input_path;
  int64_t seed_override = -1;

  auto* dataset_cmd = app.add_subcommand("dataset", "Generate a synthetic paired dataset");
  dataset_cmd->add_option("--config", config_path, "flat key-value config file");
  dataset_cmd->add_option("--out", out_dir, "output directory")->required();
  dataset_cmd->add_option("--seed", seed_override, "override dataset.seed");

  auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset directory");
  train_cmd->add_option("--config", config_path, "flat key-value config file");
  train_cmd->add_option("--dataset", dataset_dir, "dataset directory")->required();
  train_cmd->add_option("--out", out_dir, "output directory")->required();
  train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");

  RenderOptions ropts;
  auto* render_cmd = app.add_subcommand("render", "Render a MIDI file to audio");
  render_cmd->add_option("--midi", midi_path, "input MIDI file")->required();
  render_cmd->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  render_cmd->add_option("--out", out_dir, "output directory")->required();
  render_cmd->add_option("--seed", ropts.seed, "sampler seed");
  render_cmd->add_option("--steps", ropts.num_steps, "reverse diffusion steps");
  render_cmd->add_option("--guidance", ropts.guidance_weight, "classifier-free guidance weight");
  render_cmd->add_flag("--guidance-plus-one", ropts.guidance_plus_one,
                       "read the weight as 1 + w");
  render_cmd->add_option("--vocoder-iters", ropts.vocoder_iters, "Griffin-Lim iterations");
  bool no_context = false;
  render_cmd->add_flag("--no-context", no_context, "do not chain generated segment context");

  EvalOptions eopts;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint against a dataset");
  eval_cmd->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  eval_cmd->add_option("--dataset", dataset_dir, "dataset directory")->required();
  eval_cmd->add_option("--out", out_dir, "output directory")->required();
  eval_cmd->add_option("--embedder", eopts.embedder, "embedder name (melstats)");
  std::string transcriber_cmd;
  eval_cmd->add_option("--transcriber", transcriber_cmd,
                       "external command: <cmd> <wav> <out_json>");
  eval_cmd->add_option("--seed", eopts.render.seed, "sampler seed");
  eval_cmd->add_option("--steps", eopts.render.num_steps, "reverse diffusion steps");
  eval_cmd->add_option("--guidance", eopts.render.guidance_weight, "guidance weight");
  bool eval_no_context = false;
  eval_cmd->add_flag("--no-context", eval_no_context, "do not chain generated segment context");

  double ins_lo = 1.0, ins_hi = 0.0;  // invalid default: auto range
  std::string ins_out;
  auto* inspect_cmd = app.add_subcommand("inspect", "Write a spectrogram image from a dump or wav");
  inspect_cmd->add_option("--input", input_path, "mel dump or wav file")->required();
  inspect_cmd->add_option("--out", ins_out, "output PNG path")->required();
  inspect_cmd->add_option("--lo", ins_lo, "value mapped to black");
  inspect_cmd->add_option("--hi", ins_hi, "value mapped to white");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // exits 0 with help text
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (dataset_cmd->parsed())
      return cmd_dataset(config_path, out_dir, seed_override, argc, argv);
    if (train_cmd->parsed())
      return cmd_train(config_path, dataset_dir, out_dir, resume_path, argc, argv);
    if (render_cmd->parsed()) {
      ropts.use_context = !no_context;
      return cmd_render(midi_path, ckpt_path, out_dir, ropts, argc, argv);
    }
    if (eval_cmd->parsed()) {
      eopts.render.use_context = !eval_no_context;
      if (!transcriber_cmd.empty()) eopts.transcriber_command = transcriber_cmd;
      return cmd_eval(ckpt_path, dataset_dir, out_dir, eopts, argc, argv);
    }
    if (inspect_cmd->parsed()) return cmd_inspect(input_path, ins_out, ins_lo, ins_hi, argc, argv);
  } catch (const FileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissingFile;
  } catch (const VersionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitVersion;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
