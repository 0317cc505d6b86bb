#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "edgevo/odometry.hpp"

namespace edgevo {

struct RunConfig {
  OdometryConfig odometry;
  std::filesystem::path dataset;
  std::filesystem::path output = "edgevo_out";
  double association_tolerance = kAssociationTolerance;

  /// Applies one key=value setting; throws std::invalid_argument on unknown
  /// keys or unparseable values.
  void set(std::string_view key, std::string_view value);
  /// Reads a key=value file with '#' comments; errors name the line.
  void load(const std::filesystem::path& file);
  /// The full configuration in the file format, defaults included.
  std::string dump() const;

  static std::vector<std::string> keys();
};

}  // namespace edgevo
