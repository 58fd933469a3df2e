#pragma once

#include "melsynth/common.hpp"

#include <map>
#include <string>

namespace melsynth {

// Flat key-value run configuration. File syntax: one `key = value` per line,
// `#` starts a comment, blank lines ignored. Keys are dotted lowercase
// (e.g. dataset.n_tracks). Environment variables override file values using
// the prefix MELSYNTH_ with dots mapped to underscores and uppercased:
// dataset.n_tracks -> MELSYNTH_DATASET_N_TRACKS.
class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig from_file(const std::string& path);
  static KvConfig from_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const;
  // All getters check the environment override first.
  std::string get_str(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  const std::map<std::string, std::string>& values() const { return values_; }

  static std::string env_name(const std::string& key);

 private:
  std::optional<std::string> lookup(const std::string& key) const;

  std::map<std::string, std::string> values_;
};

}  // namespace melsynth
