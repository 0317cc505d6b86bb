#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "edgevo/dataset_io.hpp"
#include "edgevo/geometry.hpp"

namespace edgevo {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AteReport {
  double rmse = 0.0;
  double mean = 0.0;
  double median = 0.0;
  double max = 0.0;
  std::size_t matches = 0;
  Pose alignment;  // maps estimated positions onto ground truth
  bool translation_only = false;
  std::vector<double> timestamps;  // estimated stamps of the matched pairs
  std::vector<double> errors;      // per-pair translational error after alignment
};

/// Least-squares rigid transform T minimizing sum |T src_i - dst_i|^2.
/// Falls back to a pure translation when either point set has no spread.
Pose align_rigid(std::span<const Vec3> src, std::span<const Vec3> dst, bool* translation_only = nullptr);

/// Translational absolute trajectory error after rigid alignment. Poses are
/// paired by mutual-nearest timestamps within `tolerance`.
AteReport compute_ate(std::span<const TrajectoryEntry> estimated, std::span<const TrajectoryEntry> ground_truth,
                      double tolerance = kAssociationTolerance);

/// Sum of translation distances between consecutive poses.
double trajectory_length(std::span<const TrajectoryEntry> trajectory);

struct FrameTiming {
  double preprocess_ms = 0.0;
  double track_ms = 0.0;
  double select_ms = 0.0;
  double map_ms = 0.0;

  double total_ms() const { return preprocess_ms + track_ms + select_ms + map_ms; }
};

struct StageTiming {
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
};

struct TimingSummary {
  std::size_t frames = 0;
  StageTiming preprocess;
  StageTiming track;
  StageTiming select;
  StageTiming map;
  StageTiming total;
  double hz = 0.0;  // 1000 / mean total
};

/// Nearest-rank percentile, p in (0, 100].
double percentile(std::vector<double> values, double p);
double median(std::vector<double> values);

TimingSummary timing_summary(std::span<const FrameTiming> frames);

/// "timestamp,error" rows for plotting.
void write_error_csv(const AteReport& report, const std::filesystem::path& file);

}  // namespace edgevo
