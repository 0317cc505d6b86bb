#include "edgevo/dataset_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <locale>
#include <sstream>

namespace edgevo {

namespace fs = std::filesystem;

ParseError::ParseError(const std::string& file, std::size_t line, const std::string& what)
    : DatasetError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

namespace {

bool skippable(const std::string& line) {
  const auto first = line.find_first_not_of(" \t\r");
  return first == std::string::npos || line[first] == '#';
}

std::istringstream classic_stream(const std::string& s) {
  std::istringstream in(s);
  in.imbue(std::locale::classic());
  return in;
}

}  // namespace

std::vector<IndexEntry> read_index(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DatasetError("cannot open index file " + file.string());
  std::vector<IndexEntry> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (skippable(line)) continue;
    auto fields = classic_stream(line);
    IndexEntry e;
    if (!(fields >> e.timestamp >> e.path)) throw ParseError(file.string(), number, "expected 'timestamp filename'");
    out.push_back(std::move(e));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const IndexEntry& a, const IndexEntry& b) { return a.timestamp < b.timestamp; });
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> associate(std::span<const double> a, std::span<const double> b,
                                                           double tolerance) {
  auto nearest = [](std::span<const double> v, double t) -> std::size_t {
    const auto it = std::lower_bound(v.begin(), v.end(), t);
    if (it == v.begin()) return 0;
    if (it == v.end()) return v.size() - 1;
    const auto i = static_cast<std::size_t>(it - v.begin());
    // Ties go to the earlier stamp.
    return (t - v[i - 1] <= v[i] - t) ? i - 1 : i;
  };
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (a.empty() || b.empty()) return out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t j = nearest(b, a[i]);
    if (std::abs(a[i] - b[j]) > tolerance) continue;
    if (nearest(a, b[j]) != i) continue;
    out.emplace_back(i, j);
  }
  return out;
}

GrayImage load_gray(const fs::path& file) {
  const cv::Mat m = cv::imread(file.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty() || m.type() != CV_8UC1) throw DatasetError("cannot read image " + file.string());
  GrayImage out(m.cols, m.rows);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    std::copy(row, row + m.cols, out.row(y));
  }
  return out;
}

DepthImage load_depth(const fs::path& file, double scale) {
  const cv::Mat m = cv::imread(file.string(), cv::IMREAD_ANYDEPTH);
  if (m.empty() || m.type() != CV_16UC1) throw DatasetError("cannot read 16-bit depth " + file.string());
  DepthImage out(m.cols, m.rows);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint16_t>(y);
    for (int x = 0; x < m.cols; ++x) out(x, y) = static_cast<float>(row[x] / scale);
  }
  return out;
}

void save_rgb(const fs::path& file, const GrayImage& image) {
  cv::Mat gray(image.height(), image.width(), CV_8UC1);
  for (int y = 0; y < image.height(); ++y) {
    std::copy(image.row(y), image.row(y) + image.width(), gray.ptr<std::uint8_t>(y));
  }
  cv::Mat rgb;
  cv::merge(std::vector<cv::Mat>{gray, gray, gray}, rgb);
  if (!cv::imwrite(file.string(), rgb)) throw DatasetError("cannot write " + file.string());
}

void save_depth(const fs::path& file, const DepthImage& depth, double scale) {
  cv::Mat m(depth.height(), depth.width(), CV_16UC1);
  for (int y = 0; y < depth.height(); ++y) {
    auto* row = m.ptr<std::uint16_t>(y);
    for (int x = 0; x < depth.width(); ++x) {
      const double v = std::round(std::max(0.0, static_cast<double>(depth(x, y))) * scale);
      row[x] = static_cast<std::uint16_t>(std::min(v, 65535.0));
    }
  }
  if (!cv::imwrite(file.string(), m)) throw DatasetError("cannot write " + file.string());
}

SequenceReader::SequenceReader(const fs::path& root, double tolerance) : root_(root) {
  rgb_ = read_index(root / "rgb.txt");
  depth_ = read_index(root / "depth.txt");
  std::vector<double> ta, tb;
  for (const auto& e : rgb_) ta.push_back(e.timestamp);
  for (const auto& e : depth_) tb.push_back(e.timestamp);
  pairs_ = associate(ta, tb, tolerance);
  dropped_rgb_ = rgb_.size() - pairs_.size();
  dropped_depth_ = depth_.size() - pairs_.size();
}

std::optional<RgbdRecord> SequenceReader::at(std::size_t i) {
  if (i >= pairs_.size()) return std::nullopt;
  const auto& [ri, di] = pairs_[i];
  RgbdRecord r;
  r.timestamp = rgb_[ri].timestamp;
  try {
    r.gray = load_gray(root_ / rgb_[ri].path);
    r.depth = load_depth(root_ / depth_[di].path);
  } catch (const DatasetError& e) {
    warnings_.push_back(e.what());
    ++skipped_;
    return std::nullopt;
  }
  if (r.gray.width() != r.depth.width() || r.gray.height() != r.depth.height()) {
    warnings_.push_back("size mismatch between " + rgb_[ri].path + " and " + depth_[di].path);
    ++skipped_;
    return std::nullopt;
  }
  return r;
}

std::optional<RgbdRecord> SequenceReader::next() {
  while (cursor_ < pairs_.size()) {
    auto r = at(cursor_++);
    if (r) return r;
  }
  return std::nullopt;
}

TrajectoryEntry TrajectoryEntry::from_pose(double timestamp, const Pose& pose) {
  TrajectoryEntry e;
  e.timestamp = timestamp;
  e.translation = pose.translation();
  e.rotation = pose.quaternion();
  return e;
}

std::string format_trajectory_line(const TrajectoryEntry& e) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  out << std::fixed << std::setprecision(6) << e.timestamp;
  out << std::defaultfloat << std::setprecision(9);
  // Negative zero would print as "-0".
  auto put = [&](double v) { out << ' ' << (v == 0.0 ? 0.0 : v); };
  put(e.translation.x());
  put(e.translation.y());
  put(e.translation.z());
  put(e.rotation.x());
  put(e.rotation.y());
  put(e.rotation.z());
  put(e.rotation.w());
  return out.str();
}

void write_trajectory(std::span<const TrajectoryEntry> entries, const fs::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DatasetError("cannot write trajectory " + file.string());
  for (const auto& e : entries) out << format_trajectory_line(e) << '\n';
  if (!out) throw DatasetError("error writing " + file.string());
}

std::vector<TrajectoryEntry> load_trajectory(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DatasetError("cannot open trajectory " + file.string());
  std::vector<TrajectoryEntry> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (skippable(line)) continue;
    auto fields = classic_stream(line);
    double v[8];
    for (double& x : v) {
      if (!(fields >> x)) throw ParseError(file.string(), number, "expected 8 numeric fields");
    }
    std::string extra;
    if (fields >> extra) throw ParseError(file.string(), number, "trailing field '" + extra + "'");
    for (double x : v) {
      if (!std::isfinite(x)) throw ParseError(file.string(), number, "non-finite value");
    }
    TrajectoryEntry e;
    e.timestamp = v[0];
    e.translation = Vec3(v[1], v[2], v[3]);
    e.rotation = Eigen::Quaterniond(v[7], v[4], v[5], v[6]);
    const double n = e.rotation.norm();
    if (!(n > 1e-6)) throw ParseError(file.string(), number, "zero quaternion");
    e.rotation.normalize();
    out.push_back(e);
  }
  return out;
}

}  // namespace edgevo
