#include "melsynth/manifest.hpp"

#include <json.hpp>

#include <chrono>
#include <ctime>
#include <fstream>

namespace melsynth {

std::string RunManifest::now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string RunManifest::to_json() const {
  nlohmann::json j;
  j["command"] = command;
  j["argv"] = argv;
  j["config"] = config_echo;
  j["seeds"] = seeds;
  j["artifact_version"] = artifact_version;
  j["timestamp"] = timestamp;
  return j.dump(2);
}

void RunManifest::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write run manifest: " + path);
  out << to_json() << "\n";
}

}  // namespace melsynth
