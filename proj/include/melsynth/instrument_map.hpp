#pragma once

#include "melsynth/common.hpp"

#include <array>
#include <string>
#include <vector>

namespace melsynth {

inline constexpr int kDrumClass = 34;
inline constexpr int kNumInstrumentClasses = 34;  // ids 0..33, drums are 34

// Program -> instrument-class mapping, loaded from a versioned text table so
// users can substitute their own. Every program 0..127 must be covered.
class InstrumentMap {
 public:
  static InstrumentMap from_file(const std::string& path);
  static InstrumentMap from_string(const std::string& text, const std::string& origin = "<string>");
  // The table shipped with the artifact (data/instrument_classes.txt),
  // located via MELSYNTH_IMAP env var or the build-time data directory.
  static const InstrumentMap& builtin();

  int class_of(int program, bool is_drum) const;
  const std::string& class_name(int class_id) const;
  // A canonical program representing a class (the lowest mapped program).
  int representative_program(int class_id) const;
  int version() const { return version_; }
  int num_classes() const { return static_cast<int>(names_.size()); }

 private:
  int version_ = 0;
  std::array<int, 128> program_class_{};
  std::vector<std::string> names_;         // indexed by class id, drums last
  std::vector<int> representative_;
};

}  // namespace melsynth
