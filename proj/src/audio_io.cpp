#include "melsynth/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace melsynth {

namespace {

void put_u32(std::ostream& o, uint32_t v) {
  char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
               static_cast<char>(v >> 24)};
  o.write(b, 4);
}

void put_u16(std::ostream& o, uint16_t v) {
  char b[2] = {static_cast<char>(v), static_cast<char>(v >> 8)};
  o.write(b, 2);
}

uint32_t get_u32(std::istream& i, const std::string& what) {
  uint8_t b[4];
  i.read(reinterpret_cast<char*>(b), 4);
  if (!i) throw FormatError(what + ": truncated");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t get_u16(std::istream& i, const std::string& what) {
  uint8_t b[2];
  i.read(reinterpret_cast<char*>(b), 2);
  if (!i) throw FormatError(what + ": truncated");
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

void write_wav(const std::string& path, std::span<const float> audio, int sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write wav: " + path);
  const uint32_t data_bytes = static_cast<uint32_t>(audio.size() * 2);
  out.write("RIFF", 4);
  put_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<uint32_t>(sample_rate));
  put_u32(out, static_cast<uint32_t>(sample_rate * 2));
  put_u16(out, 2);
  put_u16(out, 16);
  out.write("data", 4);
  put_u32(out, data_bytes);
  for (float s : audio) {
    const float clamped = std::clamp(s, -1.0f, 1.0f);
    auto v = static_cast<int16_t>(std::lrint(clamped * 32767.0f));
    put_u16(out, static_cast<uint16_t>(v));
  }
  if (!out) throw FileError("short write: " + path);
}

std::vector<float> read_wav(const std::string& path, int expect_sample_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("wav file not found: " + path);
  char tag[5] = {0};
  in.read(tag, 4);
  if (!in || std::strncmp(tag, "RIFF", 4) != 0) throw FormatError(path + ": not a RIFF file");
  get_u32(in, path);
  in.read(tag, 4);
  if (!in || std::strncmp(tag, "WAVE", 4) != 0) throw FormatError(path + ": not a WAVE file");

  uint16_t channels = 0, bits = 0;
  uint32_t rate = 0;
  std::vector<float> audio;
  bool have_fmt = false;
  while (in.read(tag, 4)) {
    uint32_t size = get_u32(in, path);
    if (std::strncmp(tag, "fmt ", 4) == 0) {
      uint16_t fmt = get_u16(in, path);
      channels = get_u16(in, path);
      rate = get_u32(in, path);
      get_u32(in, path);
      get_u16(in, path);
      bits = get_u16(in, path);
      if (size > 16) in.seekg(size - 16, std::ios::cur);
      if (fmt != 1) throw FormatError(path + ": only PCM wav supported");
      have_fmt = true;
    } else if (std::strncmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw FormatError(path + ": data chunk before fmt");
      if (channels != 1) throw FormatError(path + ": expected mono");
      if (bits != 16) throw FormatError(path + ": expected 16-bit PCM");
      if (expect_sample_rate > 0 && rate != static_cast<uint32_t>(expect_sample_rate))
        throw FormatError(path + ": expected " + std::to_string(expect_sample_rate) + " Hz, got " +
                          std::to_string(rate));
      const size_t n = size / 2;
      audio.resize(n);
      for (size_t i = 0; i < n; ++i) {
        auto v = static_cast<int16_t>(get_u16(in, path));
        audio[i] = static_cast<float>(v) / 32767.0f;
      }
      return audio;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }
  throw FormatError(path + ": no data chunk");
}

void write_mel_dump_stream(std::ostream& out, const MatF& values) {
  out.write("MELS", 4);
  put_u32(out, kMelDumpVersion);
  put_u32(out, static_cast<uint32_t>(values.rows()));
  put_u32(out, static_cast<uint32_t>(values.cols()));
  static_assert(sizeof(float) == 4);
  // Row-major storage writes out directly.
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * 4));
}

MatF read_mel_dump_stream(std::istream& in, const std::string& what) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::strncmp(magic, "MELS", 4) != 0) throw FormatError(what + ": bad magic");
  uint32_t version = get_u32(in, what);
  if (version != kMelDumpVersion)
    throw VersionError(what + ": unsupported dump version " + std::to_string(version));
  uint32_t rows = get_u32(in, what);
  uint32_t cols = get_u32(in, what);
  if (rows == 0 || cols == 0 || static_cast<uint64_t>(rows) * cols > (1ull << 31))
    throw FormatError(what + ": implausible shape");
  MatF values(rows, cols);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
  if (!in) throw FormatError(what + ": truncated data");
  return values;
}

void write_mel_dump(const std::string& path, const MatF& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write mel dump: " + path);
  write_mel_dump_stream(out, values);
  if (!out) throw FileError("short write: " + path);
}

MatF read_mel_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("mel dump not found: " + path);
  return read_mel_dump_stream(in, path);
}

}  // namespace melsynth
