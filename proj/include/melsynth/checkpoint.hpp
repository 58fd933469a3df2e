#pragma once

#include "melsynth/common.hpp"
#include "melsynth/model.hpp"
#include "melsynth/spectrogram.hpp"

#include <string>

namespace melsynth {

inline constexpr uint32_t kCheckpointVersion = 1;

// Optimizer/trainer state carried inside a checkpoint so training resumes
// bit-compatibly. Tensors are stored alongside the model parameters with an
// "opt." name prefix.
struct TrainState {
  int64_t step = 0;
  uint64_t master_seed = 0;
  std::vector<MatF> adam_m;  // aligned with model parameter order
  std::vector<MatF> adam_v;
};

struct Checkpoint {
  ModelConfig model_config;
  SpecConfig spec_config;
  float scale_lo = -11.5129f;  // log(1e-5), the silence floor
  float scale_hi = 5.0f;
  uint64_t vocab_hash = 0;
  std::vector<NamedParam<float>> params;
  std::optional<TrainState> train_state;

  TransformerF build_model() const;
};

// Single-archive container: magic + version, a JSON manifest, then tensors
// in the MelSpec dump format in manifest order.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Loads and verifies the vocabulary hash against the current vocabulary.
Checkpoint load_checkpoint_checked(const std::string& path, uint64_t expect_vocab_hash);

}  // namespace melsynth
