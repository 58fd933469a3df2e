#include "melsynth/model.hpp"

namespace melsynth {

std::string to_string(DecoderMode m) {
  return m == DecoderMode::kDiffusion ? "diffusion" : "autoregressive";
}

DecoderMode decoder_mode_from_string(const std::string& s) {
  if (s == "diffusion") return DecoderMode::kDiffusion;
  if (s == "autoregressive") return DecoderMode::kAutoregressive;
  throw ValueError("unknown decoder mode: " + s);
}

void ModelConfig::validate() const {
  if (num_layers < 1 || num_heads < 1 || head_dim < 1 || mlp_dim < 1 || embed_dim < 1)
    throw ValueError("model config: sizes must be positive");
  if (embed_dim % 2 != 0) throw ValueError("model config: embed_dim must be even");
  if (max_note_positions < 1 || context_positions < 1 || decoder_positions < 1)
    throw ValueError("model config: position counts must be positive");
  if (vocab_size < 2) throw ValueError("model config: vocab too small");
}

ModelConfig ModelConfig::preset(const std::string& name) {
  ModelConfig cfg;
  if (name == "small") {
    cfg.num_layers = 8;
    cfg.num_heads = 6;
    cfg.head_dim = 64;
    cfg.mlp_dim = 1024;
    cfg.embed_dim = 512;
  } else if (name == "base") {
    cfg.num_layers = 12;
    cfg.num_heads = 12;
    cfg.head_dim = 64;
    cfg.mlp_dim = 2048;
    cfg.embed_dim = 758;
  } else if (name == "toy") {
    cfg.num_layers = 2;
    cfg.num_heads = 4;
    cfg.head_dim = 32;
    cfg.mlp_dim = 128;
    cfg.embed_dim = 128;
  } else {
    throw ValueError("unknown model preset: " + name);
  }
  return cfg;
}

}  // namespace melsynth
