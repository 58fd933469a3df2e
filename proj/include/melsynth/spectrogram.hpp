#pragma once

#include "melsynth/common.hpp"

#include <complex>
#include <vector>

namespace melsynth {

struct SpecConfig {
  int sample_rate = 16000;
  int hop = 320;         // 20 ms
  int frame_size = 640;
  int fft_size = 1024;   // frame zero-padded; smallest power of two >= frame
  int mel_bins = 128;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  double log_floor = 1e-5;  // magnitude clamp before log

  void validate() const;
  int num_bins() const { return fft_size / 2 + 1; }
  double frame_seconds() const { return static_cast<double>(hop) / sample_rate; }
};

// frames x mel_bins, log magnitude, 20 ms per frame.
struct MelSpec {
  MatF values;
  int frames() const { return static_cast<int>(values.rows()); }
  int bins() const { return static_cast<int>(values.cols()); }
};

// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);
// Center frequency (Hz) of each triangular filter; the independent oracle in
// tests recomputes these from the formulas above.
std::vector<double> mel_center_frequencies(const SpecConfig& cfg);
// mel_bins x num_bins triangular weights, unit peak.
MatF mel_filterbank(const SpecConfig& cfg);

// Centered STFT with a periodic Hann window and reflect padding.
// frames = ceil(len / hop); frame i is centered on sample i*hop.
class Stft {
 public:
  explicit Stft(const SpecConfig& cfg);
  // frames x num_bins complex spectrum.
  Mat<std::complex<float>> forward(std::span<const float> audio) const;
  // Weighted overlap-add inverse; output trimmed to frames * hop samples.
  std::vector<float> inverse(const Mat<std::complex<float>>& spec) const;
  MatF magnitude(std::span<const float> audio) const;

 private:
  SpecConfig cfg_;
  std::vector<float> window_;
};

MelSpec compute_mel(std::span<const float> audio, const SpecConfig& cfg);

struct ScaledSpec {
  MatF values;        // in [-1, 1]
  int clamped = 0;    // cells outside [lo, hi]
};

// Affine [lo, hi] -> [-1, 1] with clamping; unscale is the exact inverse on
// in-range values.
ScaledSpec scale_to_model_range(const MelSpec& m, float lo, float hi);
MelSpec unscale_from_model_range(const MatF& scaled, float lo, float hi);

// Mel pseudo-inverse (non-negative multiplicative updates) followed by
// Griffin-Lim phase recovery with momentum 0.99. Output length is
// frames * hop samples.
std::vector<float> invert_mel(const MelSpec& m, const SpecConfig& cfg, int griffin_lim_iters = 64);

// Pearson correlation between two equally-sized magnitude spectrograms.
double spectrogram_correlation(const MatF& a, const MatF& b);

}  // namespace melsynth
