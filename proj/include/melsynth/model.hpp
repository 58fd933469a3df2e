#pragma once

#include "melsynth/common.hpp"
#include "melsynth/nn.hpp"
#include "melsynth/rng.hpp"

#include <map>
#include <string>

namespace melsynth {

enum class DecoderMode { kDiffusion, kAutoregressive };

std::string to_string(DecoderMode m);
DecoderMode decoder_mode_from_string(const std::string& s);

struct ModelConfig {
  int num_layers = 2;
  int num_heads = 4;
  int head_dim = 32;
  int mlp_dim = 128;
  int embed_dim = 128;
  DecoderMode mode = DecoderMode::kDiffusion;
  bool use_context = true;
  int max_note_positions = 2048;
  int context_positions = 256;
  int decoder_positions = 256;
  int mel_bins = 128;
  int vocab_size = 901;
  bool decorrelate_positions = true;
  uint64_t init_seed = 1234;

  int attn_dim() const { return num_heads * head_dim; }
  void validate() const;

  // "small": 8 layers, 6 heads x 64, mlp 1024, embed 512
  // "base": 12 layers, 12 heads x 64, mlp 2048, embed 758
  // "toy":  2 layers, 4 heads x 32, mlp 128, embed 128
  static ModelConfig preset(const std::string& name);
};

// Standard sinusoidal position encodings, optionally decorrelated by a
// stack-specific random channel permutation and per-channel phase offset.
// Without a seed the table is exactly the original sinusoids.
template <class T>
Mat<T> decorrelated_positions(int length, int dim, std::optional<uint64_t> stack_seed);

// Sinusoid features for a continuous scalar (diffusion time is fed as
// t * 1000 so the highest-frequency channels resolve 1/1000 steps).
template <class T>
Mat<T> sinusoid_features(double value, int dim);

template <class T>
struct NamedParam {
  std::string name;
  Mat<T> value;
};

// Conditioning memories computed once per segment; reverse sampling reuses
// them across every denoiser call.
struct ConditioningBundle {
  MatF note_memory;                  // note_len x embed
  std::vector<uint8_t> note_mask;    // valid (non-PAD) note positions
  std::optional<MatF> context_memory;  // context_positions x embed
  bool is_null = false;

  int memory_rows() const {
    return static_cast<int>(note_memory.rows()) +
           (context_memory ? static_cast<int>(context_memory->rows()) : 0);
  }
};

// Encoder-decoder Transformer with pre-layer-norm (RMSNorm) blocks and a
// T5.1.1-style gated-GELU MLP. The decoder runs either as an unmasked
// diffusion denoiser with FiLM time conditioning (applied to the normed
// input before self-attention and to the cross-attention output) or as a
// causal autoregressive frame predictor.
template <class T>
class Transformer {
 public:
  using Tp = Tape<T>;
  using Var = typename Tp::Var;

  explicit Transformer(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<NamedParam<T>>& params() const { return params_; }
  std::vector<NamedParam<T>>& mutable_params() { return params_; }
  int param_index(const std::string& name) const;
  int64_t param_count() const;

  // --- tape-level forward (training path, gradients flow) ---

  struct CondVars {
    Var memory;
    std::vector<uint8_t> mask;
  };

  // Per-forward context caching param Vars so each parameter registers once.
  struct Fwd {
    Tp& tape;
    const Transformer& model;
    std::vector<Var> cache;
    Fwd(Tp& t, const Transformer& m)
        : tape(t), model(m), cache(m.params_.size(), Var{}) {}
    Var p(int idx) {
      if (!cache[static_cast<size_t>(idx)].valid())
        cache[static_cast<size_t>(idx)] =
            tape.param(model.params_[static_cast<size_t>(idx)].value, idx);
      return cache[static_cast<size_t>(idx)];
    }
  };

  Var encode_notes(Fwd& f, std::span<const int> tokens) const;
  Var encode_context(Fwd& f, const Mat<T>& context) const;
  // tokens empty => context-only is invalid; pass is_null to drop both.
  CondVars make_cond_vars(Fwd& f, std::span<const int> tokens,
                          const Mat<T>* context, bool is_null) const;
  Var time_embedding(Fwd& f, double t) const;
  Var diffusion_decode(Fwd& f, const Mat<T>& x_t, double t, const CondVars& cond) const;
  // Teacher-forced: row i of the output predicts frame i given frames < i.
  Var ar_decode(Fwd& f, const Mat<T>& target_frames, const CondVars& cond) const;

  // --- value-level wrappers (inference path) ---

  ConditioningBundle make_conditioning(std::span<const int> tokens, const MatF* context,
                                       bool is_null = false) const
    requires std::is_same_v<T, float>;
  MatF diffusion_denoise(const MatF& x_t, double t, const ConditioningBundle& bundle) const
    requires std::is_same_v<T, float>;
  MatF ar_predict(const MatF& teacher_frames, const ConditioningBundle& bundle) const
    requires std::is_same_v<T, float>;
  // Sequential sampling; dither_stddev is in model-range units.
  MatF ar_sample(const ConditioningBundle& bundle, Rng& rng, double dither_stddev) const
    requires std::is_same_v<T, float>;

  // The learned start frame used as the first autoregressive input.
  const Mat<T>& ar_start_frame() const;

  int pad_token() const { return cfg_.vocab_size - 1; }

 private:
  struct AttnIdx {
    int wq, wk, wv, wo;
  };
  struct MlpIdx {
    int w0, w1, wo;
  };
  struct EncLayerIdx {
    int norm1;
    AttnIdx attn;
    int norm2;
    MlpIdx mlp;
  };
  struct DecLayerIdx {
    int norm1, film1_ws, film1_wb;
    AttnIdx self_attn;
    int norm2;
    AttnIdx cross_attn;
    int film2_ws, film2_wb;
    int norm3;
    MlpIdx mlp;
  };

  int add_param(const std::string& name, int rows, int cols, Rng& rng, double stddev);
  int add_identity_param(const std::string& name, int rows, int cols, Rng& rng, double stddev);
  AttnIdx add_attn(const std::string& prefix, Rng& rng);
  MlpIdx add_mlp(const std::string& prefix, Rng& rng);
  std::vector<EncLayerIdx> add_encoder(const std::string& prefix, Rng& rng);

  Var attention(Fwd& f, Var queries, Var memory, const AttnIdx& idx,
                const std::vector<uint8_t>& key_mask, bool causal) const;
  Var mlp_block(Fwd& f, Var x, const MlpIdx& idx) const;
  Var film(Fwd& f, Var x, Var t_embed, int ws, int wb) const;
  Var encoder_stack(Fwd& f, Var x, const std::vector<uint8_t>& mask,
                    const std::vector<EncLayerIdx>& layers, int final_norm) const;

  ModelConfig cfg_;
  std::vector<NamedParam<T>> params_;
  std::map<std::string, int> index_;

  // Encoder stacks and decoder use decorrelated position tables.
  Mat<T> pe_notes_, pe_ctx_, pe_dec_;

  int token_embed_ = -1;
  std::vector<EncLayerIdx> note_layers_;
  int note_final_norm_ = -1;
  int ctx_in_w_ = -1, ctx_in_b_ = -1;
  std::vector<EncLayerIdx> ctx_layers_;
  int ctx_final_norm_ = -1;
  int dec_in_w_ = -1, dec_in_b_ = -1;
  std::vector<DecLayerIdx> dec_layers_;
  int dec_final_norm_ = -1;
  int dec_final_film_ws_ = -1, dec_final_film_wb_ = -1;
  int dec_out_w_ = -1, dec_out_b_ = -1;
  int time_w1_ = -1, time_b1_ = -1, time_w2_ = -1, time_b2_ = -1;
  int null_note_ = -1, null_ctx_ = -1;
  int ar_start_ = -1;
};

using TransformerF = Transformer<float>;
using TransformerD = Transformer<double>;

}  // namespace melsynth

#include "melsynth/model_impl.hpp"
