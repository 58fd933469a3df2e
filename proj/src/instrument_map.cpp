#include "melsynth/instrument_map.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#ifndef MELSYNTH_DATA_DIR
#define MELSYNTH_DATA_DIR "data"
#endif

namespace melsynth {

InstrumentMap InstrumentMap::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("instrument map not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str(), path);
}

InstrumentMap InstrumentMap::from_string(const std::string& text, const std::string& origin) {
  InstrumentMap map;
  map.program_class_.fill(-1);
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw FormatError(origin + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    if (word == "version") {
      std::string eq;
      if (!(ls >> eq >> map.version_) || eq != "=") fail("expected: version = <int>");
    } else if (word == "class") {
      int id;
      std::string name;
      if (!(ls >> id >> name)) fail("expected: class <id> <name>");
      if (id != static_cast<int>(map.names_.size())) fail("class ids must be dense and in order");
      map.names_.push_back(name);
    } else if (word == "map") {
      std::string range;
      int cls;
      if (!(ls >> range >> cls)) fail("expected: map <lo>-<hi> <class>");
      size_t dash = range.find('-');
      if (dash == std::string::npos) fail("bad program range: " + range);
      int lo = std::stoi(range.substr(0, dash));
      int hi = std::stoi(range.substr(dash + 1));
      if (lo < 0 || hi > 127 || lo > hi) fail("program range out of 0..127: " + range);
      if (cls < 0 || cls >= static_cast<int>(map.names_.size())) fail("unknown class id");
      for (int p = lo; p <= hi; ++p) {
        if (map.program_class_[p] != -1) fail("program mapped twice: " + std::to_string(p));
        map.program_class_[p] = cls;
      }
    } else {
      fail("unknown directive: " + word);
    }
  }
  if (map.version_ <= 0) throw FormatError(origin + ": missing version");
  if (map.names_.size() != kNumInstrumentClasses + 1)
    throw FormatError(origin + ": expected " + std::to_string(kNumInstrumentClasses + 1) +
                      " classes, got " + std::to_string(map.names_.size()));
  for (int p = 0; p < 128; ++p)
    if (map.program_class_[p] == -1)
      throw FormatError(origin + ": program not covered: " + std::to_string(p));
  map.representative_.assign(map.names_.size(), -1);
  for (int p = 127; p >= 0; --p) map.representative_[map.program_class_[p]] = p;
  return map;
}

const InstrumentMap& InstrumentMap::builtin() {
  static const InstrumentMap map = [] {
    if (const char* env = std::getenv("MELSYNTH_IMAP")) return from_file(env);
    return from_file(std::string(MELSYNTH_DATA_DIR) + "/instrument_classes.txt");
  }();
  return map;
}

int InstrumentMap::class_of(int program, bool is_drum) const {
  if (is_drum) return kDrumClass;
  if (program < 0 || program > 127)
    throw ValueError("program out of range: " + std::to_string(program));
  return program_class_[program];
}

const std::string& InstrumentMap::class_name(int class_id) const {
  if (class_id < 0 || class_id >= static_cast<int>(names_.size()))
    throw ValueError("class id out of range: " + std::to_string(class_id));
  return names_[class_id];
}

int InstrumentMap::representative_program(int class_id) const {
  if (class_id < 0 || class_id >= static_cast<int>(representative_.size()))
    throw ValueError("class id out of range: " + std::to_string(class_id));
  return representative_[class_id];
}

}  // namespace melsynth
