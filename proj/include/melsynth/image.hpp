#pragma once

#include "melsynth/common.hpp"

#include <string>

namespace melsynth {

// 8-bit grayscale PNG. pixels is rows x cols with values in [0, 255].
void write_png_gray(const std::string& path, const Mat<uint8_t>& pixels);

// Spectrogram image: width = frames, height = bins, low frequencies at the
// bottom. Values are mapped linearly from [lo, hi] to [0, 255] and clamped.
void write_spectrogram_png(const std::string& path, const MatF& mel, float lo, float hi);

}  // namespace melsynth
