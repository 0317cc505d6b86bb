#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "edgevo/geometry.hpp"
#include "edgevo/image.hpp"

namespace edgevo {

/// Missing index files, unreadable directories and similar fatal input errors.
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed text input; the message names file and line.
class ParseError : public DatasetError {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline constexpr double kTumDepthScale = 5000.0;
inline constexpr double kAssociationTolerance = 0.02;

struct IndexEntry {
  double timestamp = 0.0;
  std::string path;  // relative to the sequence root
};

/// Reads a "timestamp filename" index (rgb.txt, depth.txt); '#' lines and
/// blank lines are skipped.
std::vector<IndexEntry> read_index(const std::filesystem::path& file);

/// Mutual-nearest association: (i, j) is returned when b[j] is the closest
/// stamp to a[i], a[i] is the closest to b[j], and the gap is <= tolerance.
/// Both inputs must be sorted. Pairs are in increasing i.
std::vector<std::pair<std::size_t, std::size_t>> associate(std::span<const double> a, std::span<const double> b,
                                                           double tolerance = kAssociationTolerance);

/// 8-bit grayscale from any PNG/JPEG the codec reads (colour is converted).
GrayImage load_gray(const std::filesystem::path& file);
/// 16-bit depth PNG scaled to meters; 0 stays 0.
DepthImage load_depth(const std::filesystem::path& file, double scale = kTumDepthScale);

/// Writes the gray image as a 3-channel PNG.
void save_rgb(const std::filesystem::path& file, const GrayImage& image);
/// Writes meters as 16-bit PNG at `scale` units per meter, saturating.
void save_depth(const std::filesystem::path& file, const DepthImage& depth, double scale = kTumDepthScale);

struct RgbdRecord {
  double timestamp = 0.0;
  GrayImage gray;
  DepthImage depth;
};

/// Pull-based reader of a TUM RGBD directory.
class SequenceReader {
 public:
  explicit SequenceReader(const std::filesystem::path& root, double tolerance = kAssociationTolerance);

  std::size_t size() const { return pairs_.size(); }
  std::size_t dropped_rgb() const { return dropped_rgb_; }
  std::size_t dropped_depth() const { return dropped_depth_; }
  std::size_t skipped() const { return skipped_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// Next associated record, skipping unreadable images with a warning.
  std::optional<RgbdRecord> next();
  /// Loads record `i` directly.
  std::optional<RgbdRecord> at(std::size_t i);
  void rewind() { cursor_ = 0; }

 private:
  std::filesystem::path root_;
  std::vector<IndexEntry> rgb_;
  std::vector<IndexEntry> depth_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  std::size_t cursor_ = 0;
  std::size_t dropped_rgb_ = 0;
  std::size_t dropped_depth_ = 0;
  std::size_t skipped_ = 0;
  std::vector<std::string> warnings_;
};

struct TrajectoryEntry {
  double timestamp = 0.0;
  Vec3 translation = Vec3::Zero();
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();

  Pose pose() const { return Pose::from_quaternion(rotation, translation); }
  static TrajectoryEntry from_pose(double timestamp, const Pose& pose);
};

/// "timestamp tx ty tz qx qy qz qw": timestamp with 6 decimals, the rest
/// with 9 significant digits.
std::string format_trajectory_line(const TrajectoryEntry& entry);
void write_trajectory(std::span<const TrajectoryEntry> entries, const std::filesystem::path& file);
/// Quaternions are normalized on load. Throws ParseError on malformed lines.
std::vector<TrajectoryEntry> load_trajectory(const std::filesystem::path& file);

}  // namespace edgevo
