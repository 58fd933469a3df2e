#pragma once

#include "melsynth/common.hpp"

#include <map>
#include <string>
#include <vector>

namespace melsynth {

// Every CLI run writes one of these next to its outputs; the echoed command
// line, config and seeds are enough to reproduce the run.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::map<std::string, std::string> config_echo;
  std::map<std::string, uint64_t> seeds;
  std::string artifact_version{kVersion};
  std::string timestamp;  // ISO 8601, UTC

  static std::string now_iso8601();
  std::string to_json() const;
  void write(const std::string& path) const;
};

}  // namespace melsynth
