#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace melsynth {

inline constexpr std::string_view kVersion = "0.1.0";

// Row-major everywhere: sequences are rows, channels/bins are columns, and
// on-disk tensor dumps are row-major.
template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatF = Mat<float>;
using MatD = Mat<double>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Missing or unreadable file.
struct FileError : Error {
  using Error::Error;
};
// Malformed content (bad bytes, bad grammar, bad schema).
struct FormatError : Error {
  using Error::Error;
};
// Version or hash mismatch between artifacts.
struct VersionError : Error {
  using Error::Error;
};
// Argument outside its documented domain.
struct ValueError : Error {
  using Error::Error;
};

using Warnings = std::vector<std::string>;

inline void warn(Warnings* sink, std::string msg) {
  if (sink) sink->push_back(std::move(msg));
}

inline constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;

inline uint64_t fnv1a64(std::span<const uint8_t> bytes, uint64_t h = kFnvOffset) {
  for (uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = kFnvOffset) {
  return fnv1a64(std::span(reinterpret_cast<const uint8_t*>(s.data()), s.size()), h);
}

template <class T>
uint64_t fnv1a64_mat(const Mat<T>& m, uint64_t h = kFnvOffset) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto* p = reinterpret_cast<const uint8_t*>(m.data() + r * m.cols());
    h = fnv1a64(std::span(p, sizeof(T) * static_cast<size_t>(m.cols())), h);
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace melsynth
