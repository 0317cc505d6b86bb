#include "edgevo/tracking.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <stdexcept>
#include <string>

namespace edgevo {

namespace {

struct EdgePoint {
  Vec3 point;
  bool valid;
};

std::vector<EdgePoint> backproject_edges(std::span<const EdgePixel> edges, const CameraIntrinsics& intr) {
  std::vector<EdgePoint> out;
  out.reserve(edges.size());
  for (const auto& e : edges) {
    const auto p = backproject(e.position(), e.inv_depth, intr);
    out.push_back({p.value_or(Vec3::Zero()), p.has_value()});
  }
  return out;
}

// Residual and Jacobian of one edge; false when it leaves the view.
bool edge_residual(const Vec3& point, const Pose& pose, const DistanceField& field,
                   const CameraIntrinsics& level_intr, Correspondence& out) {
  const Vec3 transformed = pose * point;
  const auto pixel = project(transformed, level_intr);
  if (!pixel) return false;
  const auto sample = field_lookup(field, *pixel);
  if (!sample) return false;
  out.residual = sample->distance;
  out.warped = *pixel;
  out.nearest = sample->nearest;
  out.jacobian =
      sample->gradient.transpose() * projection_jacobian(transformed, level_intr) * point_left_jacobian(transformed);
  return true;
}

std::vector<Correspondence> residuals_from_points(std::span<const EdgePoint> points, const Pose& pose,
                                                  const DistanceField& field, const CameraIntrinsics& level_intr,
                                                  double huber_delta) {
  std::vector<Correspondence> out;
  out.reserve(points.size());
  Correspondence c;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points[i].valid) continue;
    if (!edge_residual(points[i].point, pose, field, level_intr, c)) continue;
    c.edge = i;
    c.weight = huber_weight(c.residual, huber_delta);
    out.push_back(c);
  }
  return out;
}

// Robust cost of a fixed edge set at `pose`; edges that leave the view are
// charged the cost of the outlier threshold.
double cost_on_set(std::span<const EdgePoint> points, std::span<const Correspondence> set, const Pose& pose,
                   const DistanceField& field, const CameraIntrinsics& level_intr, double delta, double threshold) {
  double cost = 0.0;
  Correspondence c;
  for (const auto& s : set) {
    if (edge_residual(points[s.edge].point, pose, field, level_intr, c)) {
      cost += huber_cost(c.residual, delta);
    } else {
      cost += huber_cost(threshold, delta);
    }
  }
  return cost;
}

struct NormalEquations {
  Mat6 h = Mat6::Zero();
  Vec6 b = Vec6::Zero();
  double cost = 0.0;
  double residual_sum = 0.0;
};

NormalEquations accumulate(std::span<const Correspondence> set, double delta) {
  NormalEquations ne;
  for (const auto& c : set) {
    ne.h.noalias() += c.weight * c.jacobian.transpose() * c.jacobian;
    ne.b.noalias() += c.weight * c.residual * c.jacobian.transpose();
    ne.cost += huber_cost(c.residual, delta);
    ne.residual_sum += std::abs(c.residual);
  }
  return ne;
}

LevelResult run_level(std::span<const EdgePixel> edges, std::span<const EdgePoint> points, const Pose& init,
                      const Frame& current, const CameraIntrinsics& intr, const TrackingConfig& config, int level) {
  const DistanceField& field = current.pyramid[level];
  const CameraIntrinsics level_intr = intr.at_level(level);
  const double delta = config.huber_delta;
  const double threshold = config.residual_thresholds[level];

  LevelResult result;
  result.pose = init;
  LevelStats& stats = result.stats;

  auto linearize = [&](const Pose& pose, std::vector<Correspondence>& inliers) -> TrackStatus {
    const auto all = residuals_from_points(points, pose, field, level_intr, delta);
    if (all.empty()) return TrackStatus::kLost;
    inliers = reject_outliers(all, level, config, edges, current.edges);
    if (inliers.size() < 6) return TrackStatus::kDegenerate;
    return TrackStatus::kOk;
  };

  std::vector<Correspondence> inliers;
  Pose pose = init;
  for (int it = 0; it < config.max_iterations[level]; ++it) {
    const TrackStatus status = linearize(pose, inliers);
    if (status != TrackStatus::kOk) {
      stats.status = status;
      break;
    }
    const NormalEquations ne = accumulate(inliers, delta);
    const Mat6 a = ne.h + config.damping * Mat6::Identity();
    Eigen::LDLT<Mat6> ldlt(a);
    Vec6 step = -ldlt.solve(ne.b);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) {
      stats.status = TrackStatus::kLost;
      break;
    }
    stats.iterations = it + 1;
    if (step.norm() < config.convergence_eps) {
      stats.converged = true;
      break;
    }
    bool accepted = false;
    for (int h = 0; h <= config.max_step_halvings; ++h) {
      const Pose candidate = apply_increment(step, pose);
      const double cost = cost_on_set(points, inliers, candidate, field, level_intr, delta, threshold);
      if (cost <= ne.cost) {
        stats.accepted_costs.emplace_back(ne.cost, cost);
        pose = candidate;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // best-so-far, unconverged
    if (step.norm() < config.convergence_eps) {
      stats.converged = true;
      break;
    }
  }

  result.pose = pose;
  if (stats.status != TrackStatus::kOk) return result;

  // Final linearization for covariance and inlier statistics.
  const TrackStatus status = linearize(pose, inliers);
  if (status != TrackStatus::kOk) {
    stats.status = status;
    return result;
  }
  const NormalEquations ne = accumulate(inliers, delta);
  result.information = ne.h;
  Eigen::LDLT<Mat6> ldlt(ne.h);
  const Mat6 cov = ldlt.solve(Mat6::Identity());
  if (ldlt.info() != Eigen::Success || !cov.allFinite()) {
    stats.status = TrackStatus::kLost;
    return result;
  }
  result.covariance = 0.5 * (cov + cov.transpose());
  stats.inliers = static_cast<int>(inliers.size());
  stats.mean_residual = ne.residual_sum / inliers.size();
  stats.final_cost = ne.cost;
  result.inliers.reserve(inliers.size());
  for (const auto& c : inliers) result.inliers.push_back(c.edge);
  return result;
}

TrackingResult track_levels(const Keyframe& keyframe, const Frame& frame, const Pose& prior,
                            const CameraIntrinsics& intr, const TrackingConfig& config, int coarsest) {
  TrackingResult out;
  out.relative_pose = prior;
  if (keyframe.edges.empty() || !frame.pyramid.has_edges()) {
    out.status = TrackStatus::kLost;
    return out;
  }
  const auto points = backproject_edges(keyframe.edges, intr);
  Pose pose = prior;
  LevelResult last;
  for (int level = coarsest; level >= 0; --level) {
    last = run_level(keyframe.edges, points, pose, frame, intr, config, level);
    out.levels[level] = last.stats;
    out.iterations[level] = last.stats.iterations;
    if (last.stats.status != TrackStatus::kOk) {
      out.status = last.stats.status;
      out.relative_pose = last.pose;
      return out;
    }
    pose = last.pose;
  }
  out.relative_pose = pose;
  out.covariance = last.covariance;
  out.inlier_count = last.stats.inliers;
  out.mean_residual = last.stats.mean_residual;
  out.converged = last.stats.converged;
  out.inliers = std::move(last.inliers);
  out.flow = compute_flow(keyframe.edges, out.inliers, pose, intr);
  return out;
}

}  // namespace

void TrackingConfig::validate(double distance_cap) const {
  for (int level = 0; level < DistanceFieldPyramid::kLevels; ++level) {
    const double t = residual_thresholds[level];
    if (!(t > 0.0)) throw std::invalid_argument("residual threshold must be positive");
    if (t > distance_cap) {
      throw std::invalid_argument("residual threshold at level " + std::to_string(level) +
                                  " exceeds the distance cap");
    }
    if (max_iterations[level] < 1) throw std::invalid_argument("max iterations must be >= 1");
  }
  if (!(gradient_margin > 0.0 && gradient_margin <= 1.0)) {
    throw std::invalid_argument("gradient margin must lie in (0, 1]");
  }
  if (!(huber_delta > 0.0)) throw std::invalid_argument("huber delta must be positive");
  if (!(convergence_eps > 0.0)) throw std::invalid_argument("convergence epsilon must be positive");
  if (max_step_halvings < 0) throw std::invalid_argument("step halvings must be >= 0");
  if (!(keyframe_max_interval > 0.0)) throw std::invalid_argument("keyframe interval must be positive");
}

const char* to_string(TrackStatus status) {
  switch (status) {
    case TrackStatus::kOk:
      return "ok";
    case TrackStatus::kLost:
      return "lost";
    case TrackStatus::kDegenerate:
      return "degenerate";
  }
  return "unknown";
}

double huber_weight(double residual, double delta) {
  const double a = std::abs(residual);
  return a <= delta ? 1.0 : delta / a;
}

double huber_cost(double residual, double delta) {
  const double a = std::abs(residual);
  return a <= delta ? 0.5 * a * a : delta * (a - 0.5 * delta);
}

std::vector<Correspondence> compute_residuals(std::span<const EdgePixel> edges, const Pose& pose,
                                              const DistanceField& field, const CameraIntrinsics& intr,
                                              double huber_delta, int level) {
  const auto points = backproject_edges(edges, intr);
  return residuals_from_points(points, pose, field, intr.at_level(level), huber_delta);
}

std::vector<Correspondence> reject_outliers(std::span<const Correspondence> correspondences, int level,
                                            const TrackingConfig& config, std::span<const EdgePixel> ref_edges,
                                            const EdgeMap& current_edges) {
  const double threshold = config.residual_thresholds[level];
  std::vector<Correspondence> out;
  out.reserve(correspondences.size());
  for (const auto& c : correspondences) {
    if (std::abs(c.residual) > threshold) continue;
    const Eigen::Vector2i q = to_level0_pixel(c.nearest, level);
    if (!current_edges.direction.contains(q.x(), q.y())) continue;
    const Vec2 g_cur = current_edges.direction(q.x(), q.y()).cast<double>();
    if (ref_edges[c.edge].gradient_dir.dot(g_cur) < config.gradient_margin) continue;
    out.push_back(c);
  }
  return out;
}

LevelResult gauss_newton_level(std::span<const EdgePixel> edges, const Pose& init, const Frame& current,
                               const CameraIntrinsics& intr, const TrackingConfig& config, int level) {
  const auto points = backproject_edges(edges, intr);
  if (points.size() < 6) {
    LevelResult r;
    r.pose = init;
    r.stats.status = TrackStatus::kDegenerate;
    return r;
  }
  return run_level(edges, points, init, current, intr, config, level);
}

FlowStats compute_flow(std::span<const EdgePixel> edges, std::span<const std::size_t> subset, const Pose& pose,
                       const CameraIntrinsics& intr) {
  const Pose translation_only(Mat3::Identity(), pose.translation());
  double sum = 0.0;
  double sum_t = 0.0;
  std::size_t n = 0;
  for (std::size_t i : subset) {
    const auto& e = edges[i];
    const auto q = warp_unbounded(e.position(), e.inv_depth, pose, intr);
    const auto qt = warp_unbounded(e.position(), e.inv_depth, translation_only, intr);
    if (!q || !qt) continue;
    sum += (*q - e.position()).squaredNorm();
    sum_t += (*qt - e.position()).squaredNorm();
    ++n;
  }
  if (n == 0) return {};
  return {std::sqrt(sum / n), std::sqrt(sum_t / n)};
}

TrackingResult track_frame(const Keyframe& keyframe, const Frame& frame, const Pose& prior,
                           const CameraIntrinsics& intr, const TrackingConfig& config) {
  return track_levels(keyframe, frame, prior, intr, config, DistanceFieldPyramid::kLevels - 1);
}

TrackingResult track_frame_single_level(const Keyframe& keyframe, const Frame& frame, const Pose& prior,
                                        const CameraIntrinsics& intr, const TrackingConfig& config) {
  return track_levels(keyframe, frame, prior, intr, config, 0);
}

bool keyframe_decision(const TrackingResult& result, const FlowStats& flow, double elapsed,
                       double running_average_correspondences, const TrackingConfig& config) {
  if (config.keyframe_w1 * flow.rms_flow + config.keyframe_w2 * flow.rms_flow_translation > 1.0) return true;
  if (running_average_correspondences > 0.0 &&
      result.inlier_count < config.keyframe_correspondence_ratio * running_average_correspondences) {
    return true;
  }
  return elapsed >= config.keyframe_max_interval;
}

}  // namespace edgevo
