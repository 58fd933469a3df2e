#include "melsynth/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace melsynth {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

KvConfig KvConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("config file not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str(), path);
}

KvConfig KvConfig::from_string(const std::string& text, const std::string& origin) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw FormatError(origin + ":" + std::to_string(lineno) + ": empty key");
    cfg.values_[key] = value;
  }
  return cfg;
}

std::string KvConfig::env_name(const std::string& key) {
  std::string name = "MELSYNTH_";
  for (char c : key) name += (c == '.') ? '_' : static_cast<char>(std::toupper(c));
  return name;
}

std::optional<std::string> KvConfig::lookup(const std::string& key) const {
  if (const char* env = std::getenv(env_name(key).c_str())) return std::string(env);
  auto it = values_.find(key);
  if (it != values_.end()) return it->second;
  return std::nullopt;
}

bool KvConfig::has(const std::string& key) const { return lookup(key).has_value(); }

std::string KvConfig::get_str(const std::string& key, const std::string& fallback) const {
  auto v = lookup(key);
  return v ? *v : fallback;
}

int64_t KvConfig::get_int(const std::string& key, int64_t fallback) const {
  auto v = lookup(key);
  if (!v) return fallback;
  try {
    size_t pos = 0;
    int64_t out = std::stoll(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw FormatError("config key " + key + ": not an integer: " + *v);
  }
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  auto v = lookup(key);
  if (!v) return fallback;
  try {
    size_t pos = 0;
    double out = std::stod(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw FormatError("config key " + key + ": not a number: " + *v);
  }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  auto v = lookup(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw FormatError("config key " + key + ": not a boolean: " + *v);
}

}  // namespace melsynth
