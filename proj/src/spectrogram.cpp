#include "melsynth/spectrogram.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>

namespace melsynth {

void SpecConfig::validate() const {
  if (sample_rate <= 0 || hop <= 0 || frame_size <= 0 || mel_bins <= 0)
    throw ValueError("spectrogram config: sizes must be positive");
  if (fft_size < frame_size) throw ValueError("spectrogram config: fft_size < frame_size");
  if (fmax_hz > sample_rate / 2.0) throw ValueError("spectrogram config: fmax above Nyquist");
  if (log_floor <= 0.0) throw ValueError("spectrogram config: log_floor must be positive");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_center_frequencies(const SpecConfig& cfg) {
  const double mel_lo = hz_to_mel(cfg.fmin_hz);
  const double mel_hi = hz_to_mel(cfg.fmax_hz);
  std::vector<double> centers(cfg.mel_bins);
  for (int b = 0; b < cfg.mel_bins; ++b) {
    double mel = mel_lo + (mel_hi - mel_lo) * (b + 1) / (cfg.mel_bins + 1);
    centers[b] = mel_to_hz(mel);
  }
  return centers;
}

MatF mel_filterbank(const SpecConfig& cfg) {
  cfg.validate();
  const int nbins = cfg.num_bins();
  const double mel_lo = hz_to_mel(cfg.fmin_hz);
  const double mel_hi = hz_to_mel(cfg.fmax_hz);
  std::vector<double> edges(cfg.mel_bins + 2);
  for (int i = 0; i < cfg.mel_bins + 2; ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.mel_bins + 1));

  MatF fb = MatF::Zero(cfg.mel_bins, nbins);
  for (int b = 0; b < cfg.mel_bins; ++b) {
    const double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
    for (int k = 0; k < nbins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
      if (f <= lo || f >= hi) continue;
      const double w = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
      fb(b, k) = static_cast<float>(w);
    }
  }
  return fb;
}

Stft::Stft(const SpecConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  window_.resize(cfg.frame_size);
  for (int n = 0; n < cfg.frame_size; ++n)
    window_[n] = static_cast<float>(0.5 - 0.5 * std::cos(2.0 * M_PI * n / cfg.frame_size));
}

Mat<std::complex<float>> Stft::forward(std::span<const float> audio) const {
  if (audio.empty()) throw ValueError("stft: empty audio");
  const int hop = cfg_.hop, frame = cfg_.frame_size, nfft = cfg_.fft_size;
  const int half = frame / 2;
  const auto len = static_cast<int64_t>(audio.size());
  const int frames = static_cast<int>((len + hop - 1) / hop);

  // Reflect padding around the signal.
  auto sample_at = [&](int64_t i) -> float {
    if (i < 0) i = -i;
    if (i >= len) i = 2 * (len - 1) - i;
    if (i < 0 || i >= len) return 0.0f;  // degenerate very-short signals
    return audio[static_cast<size_t>(i)];
  };

  Eigen::FFT<float> fft;
  std::vector<std::complex<float>> in(nfft), out(nfft);
  Mat<std::complex<float>> spec(frames, cfg_.num_bins());
  for (int f = 0; f < frames; ++f) {
    const int64_t center = static_cast<int64_t>(f) * hop;
    for (int n = 0; n < frame; ++n)
      in[n] = sample_at(center - half + n) * window_[n];
    std::fill(in.begin() + frame, in.end(), std::complex<float>(0.0f));
    fft.fwd(out, in);
    for (int k = 0; k < cfg_.num_bins(); ++k) spec(f, k) = out[k];
  }
  return spec;
}

std::vector<float> Stft::inverse(const Mat<std::complex<float>>& spec) const {
  const int hop = cfg_.hop, frame = cfg_.frame_size, nfft = cfg_.fft_size;
  const int half = frame / 2;
  const int frames = static_cast<int>(spec.rows());
  const int nbins = cfg_.num_bins();
  if (spec.cols() != nbins) throw ValueError("istft: wrong bin count");

  const int64_t out_len = static_cast<int64_t>(frames) * hop;
  const int64_t buf_len = out_len + frame;
  std::vector<double> acc(buf_len, 0.0), norm(buf_len, 0.0);

  Eigen::FFT<float> fft;
  std::vector<std::complex<float>> full(nfft), time(nfft);
  for (int f = 0; f < frames; ++f) {
    for (int k = 0; k < nbins; ++k) full[k] = spec(f, k);
    for (int k = nbins; k < nfft; ++k) full[k] = std::conj(spec(f, nfft - k));
    fft.inv(time, full);
    // Frame f covers samples [f*hop - half, f*hop + half); the buffer is
    // shifted by +half so indices stay non-negative.
    const int64_t start = static_cast<int64_t>(f) * hop;
    for (int n = 0; n < frame; ++n) {
      acc[start + n] += static_cast<double>(time[n].real()) * window_[n];
      norm[start + n] += static_cast<double>(window_[n]) * window_[n];
    }
  }
  std::vector<float> audio(static_cast<size_t>(out_len));
  for (int64_t i = 0; i < out_len; ++i) {
    const double w = norm[i + half];
    audio[static_cast<size_t>(i)] = w > 1e-10 ? static_cast<float>(acc[i + half] / w) : 0.0f;
  }
  return audio;
}

MatF Stft::magnitude(std::span<const float> audio) const {
  auto spec = forward(audio);
  return spec.cwiseAbs();
}

MelSpec compute_mel(std::span<const float> audio, const SpecConfig& cfg) {
  if (audio.empty()) throw ValueError("compute_mel: empty audio");
  Stft stft(cfg);
  MatF mag = stft.magnitude(audio);                    // frames x bins
  MatF fb = mel_filterbank(cfg);                       // mel x bins
  MatF mel = mag * fb.transpose();                     // frames x mel
  const float floor = static_cast<float>(cfg.log_floor);
  MelSpec out;
  out.values = (mel.array() + floor).log().matrix();
  return out;
}

ScaledSpec scale_to_model_range(const MelSpec& m, float lo, float hi) {
  if (!(lo < hi)) throw ValueError("scale_to_model_range: lo must be < hi");
  ScaledSpec out;
  out.values.resize(m.values.rows(), m.values.cols());
  const float scale = 2.0f / (hi - lo);
  for (Eigen::Index r = 0; r < m.values.rows(); ++r)
    for (Eigen::Index c = 0; c < m.values.cols(); ++c) {
      float v = m.values(r, c);
      if (v < lo || v > hi) ++out.clamped;
      v = std::clamp(v, lo, hi);
      out.values(r, c) = (v - lo) * scale - 1.0f;
    }
  return out;
}

MelSpec unscale_from_model_range(const MatF& scaled, float lo, float hi) {
  if (!(lo < hi)) throw ValueError("unscale_from_model_range: lo must be < hi");
  MelSpec out;
  out.values = ((scaled.array() + 1.0f) * 0.5f * (hi - lo) + lo).matrix();
  return out;
}

namespace {

// Non-negative least squares via multiplicative updates:
// x <- x * (A^T y) / (A^T A x + eps).
MatF mel_to_linear(const MelSpec& m, const SpecConfig& cfg) {
  MatF fb = mel_filterbank(cfg);  // mel x bins
  const float floor = static_cast<float>(cfg.log_floor);
  MatF target = (m.values.array().exp() - floor).cwiseMax(0.0f).matrix();  // frames x mel
  // Initialize with the normalized transpose.
  Eigen::VectorXf col_sums = fb.colwise().sum().transpose().cwiseMax(1e-8f);
  MatF num = target * fb;  // frames x bins, loop invariant
  MatF lin = num;
  for (Eigen::Index c = 0; c < lin.cols(); ++c) lin.col(c) /= col_sums(c);
  constexpr int kIters = 30;
  constexpr float kEps = 1e-8f;
  for (int it = 0; it < kIters; ++it) {
    MatF den = (lin * fb.transpose()) * fb;  // frames x bins
    lin = (lin.array() * num.array() / (den.array() + kEps)).matrix();
  }
  return lin;
}

}  // namespace

std::vector<float> invert_mel(const MelSpec& m, const SpecConfig& cfg, int griffin_lim_iters) {
  if (griffin_lim_iters < 1) throw ValueError("invert_mel: iters must be >= 1");
  cfg.validate();
  if (m.bins() != cfg.mel_bins) throw ValueError("invert_mel: wrong mel bin count");
  const int frames = m.frames();
  MatF mag = mel_to_linear(m, cfg);  // frames x bins

  using CMat = Mat<std::complex<float>>;
  Stft stft(cfg);
  const double momentum = 0.99;
  CMat phase = CMat::Constant(frames, cfg.num_bins(), std::complex<float>(1.0f, 0.0f));
  CMat prev = CMat::Zero(frames, cfg.num_bins());
  CMat estimate = CMat::Zero(frames, cfg.num_bins());
  for (int it = 0; it < griffin_lim_iters; ++it) {
    CMat spec = mag.cast<std::complex<float>>().cwiseProduct(phase);
    std::vector<float> audio = stft.inverse(spec);
    prev = estimate;
    estimate = stft.forward(audio);
    CMat tmp = estimate - static_cast<float>(momentum / (1.0 + momentum)) * prev;
    for (Eigen::Index r = 0; r < tmp.rows(); ++r)
      for (Eigen::Index c = 0; c < tmp.cols(); ++c) {
        float a = std::abs(tmp(r, c));
        phase(r, c) = a > 1e-12f ? tmp(r, c) / a : std::complex<float>(1.0f, 0.0f);
      }
  }
  CMat spec = mag.cast<std::complex<float>>().cwiseProduct(phase);
  std::vector<float> audio = stft.inverse(spec);
  audio.resize(static_cast<size_t>(frames) * cfg.hop, 0.0f);
  return audio;
}

double spectrogram_correlation(const MatF& a, const MatF& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ValueError("spectrogram_correlation: shape mismatch");
  const double ma = a.cast<double>().mean(), mb = b.cast<double>().mean();
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      const double da = a(r, c) - ma, db = b(r, c) - mb;
      cov += da * db;
      va += da * da;
      vb += db * db;
    }
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace melsynth
