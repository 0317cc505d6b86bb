#include "edgevo/evaluation.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

namespace edgevo {

Pose align_rigid(std::span<const Vec3> src, std::span<const Vec3> dst, bool* translation_only) {
  const auto n = static_cast<Eigen::Index>(src.size());
  Eigen::Matrix3Xd a(3, n), b(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    a.col(i) = src[i];
    b.col(i) = dst[i];
  }
  const Vec3 ca = a.rowwise().mean();
  const Vec3 cb = b.rowwise().mean();
  const double spread_a = (a.colwise() - ca).colwise().norm().maxCoeff();
  const double spread_b = (b.colwise() - cb).colwise().norm().maxCoeff();
  const bool degenerate = n < 2 || spread_a < 1e-12 || spread_b < 1e-12;
  if (translation_only != nullptr) *translation_only = degenerate;
  if (degenerate) return Pose(Mat3::Identity(), cb - ca);
  const Eigen::Matrix4d t = Eigen::umeyama(a, b, false);
  return Pose(t.topLeftCorner<3, 3>(), t.topRightCorner<3, 1>());
}

AteReport compute_ate(std::span<const TrajectoryEntry> estimated, std::span<const TrajectoryEntry> ground_truth,
                      double tolerance) {
  std::vector<TrajectoryEntry> est(estimated.begin(), estimated.end());
  std::vector<TrajectoryEntry> gt(ground_truth.begin(), ground_truth.end());
  auto by_time = [](const TrajectoryEntry& x, const TrajectoryEntry& y) { return x.timestamp < y.timestamp; };
  std::stable_sort(est.begin(), est.end(), by_time);
  std::stable_sort(gt.begin(), gt.end(), by_time);
  std::vector<double> te, tg;
  for (const auto& e : est) te.push_back(e.timestamp);
  for (const auto& g : gt) tg.push_back(g.timestamp);
  const auto pairs = associate(te, tg, tolerance);
  if (pairs.size() < 2) {
    throw EvaluationError("need at least 2 associated poses, got " + std::to_string(pairs.size()));
  }

  std::vector<Vec3> src, dst;
  for (const auto& [i, j] : pairs) {
    src.push_back(est[i].translation);
    dst.push_back(gt[j].translation);
  }
  AteReport r;
  r.matches = pairs.size();
  r.alignment = align_rigid(src, dst, &r.translation_only);
  double sq = 0.0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const double e = (r.alignment * src[k] - dst[k]).norm();
    r.errors.push_back(e);
    r.timestamps.push_back(est[pairs[k].first].timestamp);
    sq += e * e;
  }
  const double n = static_cast<double>(r.errors.size());
  r.rmse = std::sqrt(sq / n);
  r.mean = std::accumulate(r.errors.begin(), r.errors.end(), 0.0) / n;
  r.median = median(r.errors);
  r.max = *std::max_element(r.errors.begin(), r.errors.end());
  return r;
}

double trajectory_length(std::span<const TrajectoryEntry> trajectory) {
  double length = 0.0;
  for (std::size_t i = 1; i < trajectory.size(); ++i) {
    length += (trajectory[i].translation - trajectory[i - 1].translation).norm();
  }
  return length;
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 == 1 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

namespace {

StageTiming stage(std::span<const FrameTiming> frames, double (*get)(const FrameTiming&)) {
  std::vector<double> v;
  v.reserve(frames.size());
  for (const auto& f : frames) v.push_back(get(f));
  StageTiming s;
  if (v.empty()) return s;
  s.mean_ms = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  s.median_ms = median(v);
  s.p95_ms = percentile(v, 95.0);
  return s;
}

}  // namespace

TimingSummary timing_summary(std::span<const FrameTiming> frames) {
  TimingSummary s;
  s.frames = frames.size();
  s.preprocess = stage(frames, [](const FrameTiming& f) { return f.preprocess_ms; });
  s.track = stage(frames, [](const FrameTiming& f) { return f.track_ms; });
  s.select = stage(frames, [](const FrameTiming& f) { return f.select_ms; });
  s.map = stage(frames, [](const FrameTiming& f) { return f.map_ms; });
  s.total = stage(frames, [](const FrameTiming& f) { return f.total_ms(); });
  s.hz = s.total.mean_ms > 0.0 ? 1000.0 / s.total.mean_ms : 0.0;
  return s;
}

void write_error_csv(const AteReport& report, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw EvaluationError("cannot write " + file.string());
  out << "timestamp,error\n" << std::fixed;
  for (std::size_t i = 0; i < report.errors.size(); ++i) {
    out << std::setprecision(6) << report.timestamps[i] << ',' << std::setprecision(9) << report.errors[i] << '\n';
  }
}

}  // namespace edgevo
