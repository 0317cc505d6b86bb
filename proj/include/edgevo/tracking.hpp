#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "edgevo/geometry.hpp"
#include "edgevo/image_pipeline.hpp"
#include "edgevo/keyframe.hpp"

namespace edgevo {

struct TrackingConfig {
  /// Outlier threshold per pyramid level (index = level), in level pixels.
  std::array<double, DistanceFieldPyramid::kLevels> residual_thresholds{2.5, 5.0, 10.0};
  /// eta: minimum dot product between matched gradient directions.
  double gradient_margin = 0.6;
  double huber_delta = 1.0;
  std::array<int, DistanceFieldPyramid::kLevels> max_iterations{10, 10, 10};
  double convergence_eps = 1e-6;
  int max_step_halvings = 5;
  double damping = 1e-8;

  double keyframe_w1 = 1.0 / 12.0;
  double keyframe_w2 = 1.0 / 12.0;
  double keyframe_correspondence_ratio = 0.3;
  double keyframe_max_interval = 1.0;  // seconds

  /// Throws std::invalid_argument on inconsistent values.
  void validate(double distance_cap) const;
};

enum class TrackStatus { kOk, kLost, kDegenerate };

const char* to_string(TrackStatus status);

double huber_weight(double residual, double delta);
double huber_cost(double residual, double delta);

struct Correspondence {
  std::size_t edge = 0;
  double residual = 0.0;  // level pixels
  Row6 jacobian = Row6::Zero();
  double weight = 1.0;
  Vec2 warped = Vec2::Zero();
  Vec2 nearest = Vec2::Zero();  // closest edge in the current frame, level coordinates
};

/// Distance-field residuals of reference edges (level-0 pixels, inverse
/// depth) re-projected under `pose` into `field` at pyramid `level`.
/// `intr` are level-0 intrinsics. Edges that leave the view are dropped; an
/// empty result means tracking is lost.
std::vector<Correspondence> compute_residuals(std::span<const EdgePixel> edges, const Pose& pose,
                                              const DistanceField& field, const CameraIntrinsics& intr,
                                              double huber_delta, int level = 0);

/// Drops correspondences above the level threshold and those whose gradient
/// directions disagree (dot product below eta). The current-frame direction
/// is read at the matched edge pixel of `current_edges` (level 0).
std::vector<Correspondence> reject_outliers(std::span<const Correspondence> correspondences, int level,
                                            const TrackingConfig& config, std::span<const EdgePixel> ref_edges,
                                            const EdgeMap& current_edges);

struct LevelStats {
  int iterations = 0;
  /// (cost before, cost after) of every accepted step on its inlier set.
  std::vector<std::pair<double, double>> accepted_costs;
  int inliers = 0;
  double mean_residual = 0.0;
  double final_cost = 0.0;
  bool converged = false;
  TrackStatus status = TrackStatus::kOk;
};

struct LevelResult {
  Pose pose;
  Mat6 covariance = Mat6::Identity();
  Mat6 information = Mat6::Zero();
  LevelStats stats;
  std::vector<std::size_t> inliers;
};

/// Huber-weighted Gauss-Newton with step halving on one pyramid level.
LevelResult gauss_newton_level(std::span<const EdgePixel> edges, const Pose& init, const Frame& current,
                               const CameraIntrinsics& intr, const TrackingConfig& config, int level);

struct FlowStats {
  double rms_flow = 0.0;              // t
  double rms_flow_translation = 0.0;  // t', rotation removed
};

/// Root-mean-square edge flow over the given edges at level 0.
FlowStats compute_flow(std::span<const EdgePixel> edges, std::span<const std::size_t> subset, const Pose& pose,
                       const CameraIntrinsics& intr);

struct TrackingResult {
  Pose relative_pose;  // keyframe -> current camera
  Mat6 covariance = Mat6::Identity();
  int inlier_count = 0;
  double mean_residual = 0.0;
  bool converged = false;
  TrackStatus status = TrackStatus::kOk;
  std::array<int, DistanceFieldPyramid::kLevels> iterations{0, 0, 0};
  std::array<LevelStats, DistanceFieldPyramid::kLevels> levels;
  std::vector<std::size_t> inliers;  // level-0 inlier edge indices
  FlowStats flow;
};

/// Coarse-to-fine alignment of the keyframe's edges against the frame's
/// distance-field pyramid, starting from `prior` at the coarsest level.
TrackingResult track_frame(const Keyframe& keyframe, const Frame& frame, const Pose& prior,
                           const CameraIntrinsics& intr, const TrackingConfig& config);

/// Single-level variant used for ablations.
TrackingResult track_frame_single_level(const Keyframe& keyframe, const Frame& frame, const Pose& prior,
                                        const CameraIntrinsics& intr, const TrackingConfig& config);

bool keyframe_decision(const TrackingResult& result, const FlowStats& flow, double elapsed,
                       double running_average_correspondences, const TrackingConfig& config);

}  // namespace edgevo
