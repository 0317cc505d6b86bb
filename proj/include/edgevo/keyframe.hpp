#pragma once

#include <memory>
#include <vector>

#include <Eigen/Core>

#include "edgevo/geometry.hpp"
#include "edgevo/image_pipeline.hpp"

namespace edgevo {

struct EdgePixel {
  Eigen::Vector2i pixel = Eigen::Vector2i::Zero();
  double inv_depth = 0.0;                 // 1/m
  double measured_inv_depth = 0.0;        // from the depth image, 0 if unknown
  Vec2 gradient_dir = Vec2::Zero();       // unit image gradient
  double gradient_mag = 0.0;
  int track_age = 0;                      // frames this edge was tracked as an inlier

  Vec2 position() const { return pixel.cast<double>(); }
};

enum class EdgeState { kCandidate, kActive, kMarginalized };

/// A tracking reference and sliding-window node. Images and pyramids are
/// shared read-only; edge attributes and the pose are per-copy.
struct Keyframe {
  int id = -1;
  double timestamp = 0.0;
  Pose pose_world;  // camera-to-world
  std::vector<EdgePixel> edges;
  std::vector<EdgeState> states;
  std::shared_ptr<const Frame> frame;

  const DistanceField& field(int level = 0) const { return frame->pyramid[level]; }
};

}  // namespace edgevo
