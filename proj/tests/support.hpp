#pragma once

#include <memory>
#include <random>

#include "edgevo/edge_selection.hpp"
#include "edgevo/image_pipeline.hpp"
#include "edgevo/keyframe.hpp"
#include "edgevo/synthetic_world.hpp"

namespace edgevo::test {

inline std::shared_ptr<const Frame> rendered_frame(const SyntheticScene& scene, const Pose& pose, double stamp = 0.0,
                                                   const CameraIntrinsics& intr = {}) {
  auto r = render_frame(scene, pose, intr);
  return preprocess_frame(stamp, std::move(r->gray), std::move(r->depth), PreprocessConfig{});
}

/// Keyframe holding every culled edge of the frame as a candidate.
inline Keyframe make_keyframe(int id, const Pose& pose, std::shared_ptr<const Frame> frame) {
  Keyframe kf;
  kf.id = id;
  kf.timestamp = frame->timestamp;
  kf.pose_world = pose;
  kf.edges = cull_edges(edge_candidates(frame->edges), frame->depth, 100.0);
  kf.states.assign(kf.edges.size(), EdgeState::kCandidate);
  kf.frame = std::move(frame);
  return kf;
}

inline Twist random_twist(std::mt19937_64& rng, double trans, double rot) {
  std::normal_distribution<double> n(0.0, 1.0);
  Twist t;
  for (int i = 0; i < 3; ++i) t(i) = trans * n(rng);
  for (int i = 3; i < 6; ++i) t(i) = rot * n(rng);
  return t;
}

}  // namespace edgevo::test
