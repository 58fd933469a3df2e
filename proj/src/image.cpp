#include "melsynth/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace melsynth {

namespace {

void put_u32be(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v >> 24));
  out.push_back(static_cast<char>(v >> 16));
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v));
}

void write_chunk(std::ofstream& out, const char type[4], const std::string& data) {
  std::string head;
  put_u32be(head, static_cast<uint32_t>(data.size()));
  out.write(head.data(), 4);
  out.write(type, 4);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  uLong crc = crc32(0L, nullptr, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(data.data()),
              static_cast<uInt>(data.size()));
  std::string tail;
  put_u32be(tail, static_cast<uint32_t>(crc));
  out.write(tail.data(), 4);
}

}  // namespace

void write_png_gray(const std::string& path, const Mat<uint8_t>& pixels) {
  const auto height = static_cast<uint32_t>(pixels.rows());
  const auto width = static_cast<uint32_t>(pixels.cols());
  if (height == 0 || width == 0) throw ValueError("write_png_gray: empty image");

  // Raw scanlines with filter byte 0.
  std::string raw;
  raw.reserve(static_cast<size_t>(height) * (width + 1));
  for (uint32_t r = 0; r < height; ++r) {
    raw.push_back('\0');
    for (uint32_t c = 0; c < width; ++c) raw.push_back(static_cast<char>(pixels(r, c)));
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::string compressed(comp_len, '\0');
  if (compress2(reinterpret_cast<Bytef*>(compressed.data()), &comp_len,
                reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                9) != Z_OK)
    throw Error("write_png_gray: deflate failed");
  compressed.resize(comp_len);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write png: " + path);
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  out.write(reinterpret_cast<const char*>(sig), 8);
  std::string ihdr;
  put_u32be(ihdr, width);
  put_u32be(ihdr, height);
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(0);   // grayscale
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // no interlace
  write_chunk(out, "IHDR", ihdr);
  write_chunk(out, "IDAT", compressed);
  write_chunk(out, "IEND", "");
  if (!out) throw FileError("short write: " + path);
}

void write_spectrogram_png(const std::string& path, const MatF& mel, float lo, float hi) {
  if (!(lo < hi)) throw ValueError("write_spectrogram_png: lo must be < hi");
  const auto frames = mel.rows();
  const auto bins = mel.cols();
  Mat<uint8_t> pixels(bins, frames);
  for (Eigen::Index f = 0; f < frames; ++f)
    for (Eigen::Index b = 0; b < bins; ++b) {
      const float v = std::clamp((mel(f, b) - lo) / (hi - lo), 0.0f, 1.0f);
      // Row 0 is the top of the image; flip so bin 0 (lowest) lands there last.
      pixels(bins - 1 - b, f) = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
  write_png_gray(path, pixels);
}

}  // namespace melsynth
