#pragma once

#include "melsynth/common.hpp"
#include "melsynth/spectrogram.hpp"

#include <string>
#include <vector>

namespace melsynth {

// WAV: 16 kHz, 16-bit PCM, mono.
void write_wav(const std::string& path, std::span<const float> audio, int sample_rate = 16000);
std::vector<float> read_wav(const std::string& path, int expect_sample_rate = 16000);

// MelSpec binary dump: 16-byte header (magic "MELS", u32 version, u32 frames,
// u32 bins) followed by row-major little-endian 32-bit floats. The same
// layout stores named checkpoint tensors.
inline constexpr uint32_t kMelDumpVersion = 1;

void write_mel_dump(const std::string& path, const MatF& values);
MatF read_mel_dump(const std::string& path);

// Stream forms used by the checkpoint container.
void write_mel_dump_stream(std::ostream& out, const MatF& values);
MatF read_mel_dump_stream(std::istream& in, const std::string& what);

}  // namespace melsynth
