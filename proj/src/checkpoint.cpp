#include "melsynth/checkpoint.hpp"

#include "melsynth/audio_io.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace melsynth {

using nlohmann::json;

namespace {

json model_config_to_json(const ModelConfig& c) {
  return json{{"num_layers", c.num_layers},
              {"num_heads", c.num_heads},
              {"head_dim", c.head_dim},
              {"mlp_dim", c.mlp_dim},
              {"embed_dim", c.embed_dim},
              {"mode", to_string(c.mode)},
              {"use_context", c.use_context},
              {"max_note_positions", c.max_note_positions},
              {"context_positions", c.context_positions},
              {"decoder_positions", c.decoder_positions},
              {"mel_bins", c.mel_bins},
              {"vocab_size", c.vocab_size},
              {"decorrelate_positions", c.decorrelate_positions},
              {"init_seed", c.init_seed}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.num_layers = j.at("num_layers");
  c.num_heads = j.at("num_heads");
  c.head_dim = j.at("head_dim");
  c.mlp_dim = j.at("mlp_dim");
  c.embed_dim = j.at("embed_dim");
  c.mode = decoder_mode_from_string(j.at("mode"));
  c.use_context = j.at("use_context");
  c.max_note_positions = j.at("max_note_positions");
  c.context_positions = j.at("context_positions");
  c.decoder_positions = j.at("decoder_positions");
  c.mel_bins = j.at("mel_bins");
  c.vocab_size = j.at("vocab_size");
  c.decorrelate_positions = j.at("decorrelate_positions");
  c.init_seed = j.at("init_seed");
  return c;
}

json spec_config_to_json(const SpecConfig& c) {
  return json{{"sample_rate", c.sample_rate}, {"hop", c.hop},
              {"frame_size", c.frame_size},   {"fft_size", c.fft_size},
              {"mel_bins", c.mel_bins},       {"fmin_hz", c.fmin_hz},
              {"fmax_hz", c.fmax_hz},         {"log_floor", c.log_floor}};
}

SpecConfig spec_config_from_json(const json& j) {
  SpecConfig c;
  c.sample_rate = j.at("sample_rate");
  c.hop = j.at("hop");
  c.frame_size = j.at("frame_size");
  c.fft_size = j.at("fft_size");
  c.mel_bins = j.at("mel_bins");
  c.fmin_hz = j.at("fmin_hz");
  c.fmax_hz = j.at("fmax_hz");
  c.log_floor = j.at("log_floor");
  return c;
}

constexpr char kMagic[8] = {'M', 'S', 'C', 'K', 'P', 'T', '0', '\n'};

void put_u32le(std::ostream& o, uint32_t v) {
  char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
               static_cast<char>(v >> 24)};
  o.write(b, 4);
}

uint32_t get_u32le(std::istream& i, const std::string& what) {
  uint8_t b[4];
  i.read(reinterpret_cast<char*>(b), 4);
  if (!i) throw FormatError(what + ": truncated");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

TransformerF Checkpoint::build_model() const {
  TransformerF model(model_config);
  auto& dst = model.mutable_params();
  if (dst.size() != params.size())
    throw FormatError("checkpoint: parameter count does not match the config");
  for (size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].name != params[i].name)
      throw FormatError("checkpoint: unexpected parameter " + params[i].name + " (want " +
                        dst[i].name + ")");
    if (dst[i].value.rows() != params[i].value.rows() ||
        dst[i].value.cols() != params[i].value.cols())
      throw FormatError("checkpoint: shape mismatch for " + params[i].name);
    dst[i].value = params[i].value;
  }
  return model;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["artifact_version"] = std::string(kVersion);
  manifest["model_config"] = model_config_to_json(ckpt.model_config);
  manifest["spec_config"] = spec_config_to_json(ckpt.spec_config);
  manifest["scale_lo"] = ckpt.scale_lo;
  manifest["scale_hi"] = ckpt.scale_hi;
  manifest["vocab_hash"] = hex64(ckpt.vocab_hash);

  std::vector<const NamedParam<float>*> tensors;
  json tensor_list = json::array();
  for (const auto& p : ckpt.params) {
    tensor_list.push_back({{"name", p.name},
                           {"rows", p.value.rows()},
                           {"cols", p.value.cols()}});
    tensors.push_back(&p);
  }
  std::vector<NamedParam<float>> opt_tensors;
  if (ckpt.train_state) {
    const TrainState& ts = *ckpt.train_state;
    manifest["train_state"] = {{"step", ts.step}, {"master_seed", ts.master_seed}};
    if (ts.adam_m.size() != ckpt.params.size() || ts.adam_v.size() != ckpt.params.size())
      throw ValueError("checkpoint: optimizer state size mismatch");
    for (size_t i = 0; i < ckpt.params.size(); ++i) {
      opt_tensors.push_back({"opt.m." + ckpt.params[i].name, ts.adam_m[i]});
      opt_tensors.push_back({"opt.v." + ckpt.params[i].name, ts.adam_v[i]});
    }
    for (const auto& p : opt_tensors) {
      tensor_list.push_back({{"name", p.name},
                             {"rows", p.value.rows()},
                             {"cols", p.value.cols()}});
      tensors.push_back(&p);
    }
  }
  manifest["tensors"] = std::move(tensor_list);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  put_u32le(out, kCheckpointVersion);
  const std::string mtext = manifest.dump();
  put_u32le(out, static_cast<uint32_t>(mtext.size()));
  out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  for (const auto* p : tensors) write_mel_dump_stream(out, p->value);
  if (!out) throw FileError("short write: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("checkpoint not found: " + path);
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw FormatError(path + ": not a checkpoint file");
  const uint32_t version = get_u32le(in, path);
  if (version != kCheckpointVersion)
    throw VersionError(path + ": unsupported checkpoint version " + std::to_string(version));
  const uint32_t mlen = get_u32le(in, path);
  std::string mtext(mlen, '\0');
  in.read(mtext.data(), mlen);
  if (!in) throw FormatError(path + ": truncated manifest");

  json manifest;
  try {
    manifest = json::parse(mtext);
  } catch (const json::exception& e) {
    throw FormatError(path + ": bad manifest: " + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.model_config = model_config_from_json(manifest.at("model_config"));
    ckpt.spec_config = spec_config_from_json(manifest.at("spec_config"));
    ckpt.scale_lo = manifest.at("scale_lo");
    ckpt.scale_hi = manifest.at("scale_hi");
    ckpt.vocab_hash = std::stoull(manifest.at("vocab_hash").get<std::string>(), nullptr, 16);

    std::vector<NamedParam<float>> all;
    for (const auto& t : manifest.at("tensors")) {
      NamedParam<float> p;
      p.name = t.at("name");
      p.value = read_mel_dump_stream(in, path + ":" + p.name);
      if (p.value.rows() != t.at("rows").get<Eigen::Index>() ||
          p.value.cols() != t.at("cols").get<Eigen::Index>())
        throw FormatError(path + ": tensor shape disagrees with manifest: " + p.name);
      all.push_back(std::move(p));
    }
    std::vector<NamedParam<float>> opt;
    for (auto& p : all) {
      if (p.name.rfind("opt.", 0) == 0)
        opt.push_back(std::move(p));
      else
        ckpt.params.push_back(std::move(p));
    }
    if (manifest.contains("train_state")) {
      TrainState ts;
      ts.step = manifest.at("train_state").at("step");
      ts.master_seed = manifest.at("train_state").at("master_seed");
      ts.adam_m.resize(ckpt.params.size());
      ts.adam_v.resize(ckpt.params.size());
      if (opt.size() != 2 * ckpt.params.size())
        throw FormatError(path + ": optimizer tensors incomplete");
      for (size_t i = 0; i < ckpt.params.size(); ++i) {
        if (opt[2 * i].name != "opt.m." + ckpt.params[i].name ||
            opt[2 * i + 1].name != "opt.v." + ckpt.params[i].name)
          throw FormatError(path + ": optimizer tensor order mismatch");
        ts.adam_m[i] = std::move(opt[2 * i].value);
        ts.adam_v[i] = std::move(opt[2 * i + 1].value);
      }
      ckpt.train_state = std::move(ts);
    }
  } catch (const json::exception& e) {
    throw FormatError(path + ": bad manifest: " + e.what());
  }
  return ckpt;
}

Checkpoint load_checkpoint_checked(const std::string& path, uint64_t expect_vocab_hash) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.vocab_hash != expect_vocab_hash)
    throw VersionError(path + ": vocabulary hash mismatch (checkpoint " + hex64(ckpt.vocab_hash) +
                       ", current " + hex64(expect_vocab_hash) + ")");
  return ckpt;
}

}  // namespace melsynth
