#pragma once

#include <array>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "edgevo/dataset_io.hpp"
#include "edgevo/edge_selection.hpp"
#include "edgevo/evaluation.hpp"
#include "edgevo/image_pipeline.hpp"
#include "edgevo/keyframe.hpp"
#include "edgevo/local_mapping.hpp"
#include "edgevo/tracking.hpp"

namespace edgevo {

struct OdometryConfig {
  CameraIntrinsics intrinsics;
  PreprocessConfig preprocess;
  TrackingConfig tracking;
  SelectionConfig selection;
  MappingConfig mapping;
  bool use_selection = true;
  bool enable_mapping = true;
  bool single_thread = true;

  void validate() const;
};

struct FrameDiagnostics {
  std::size_t frame = 0;
  double timestamp = 0.0;
  int keyframe_id = -1;  // reference keyframe (the new one on keyframe frames)
  bool is_keyframe = false;
  TrackStatus status = TrackStatus::kOk;
  std::size_t tracked_edges = 0;
  int inliers = 0;
  double mean_residual = 0.0;
  std::array<int, DistanceFieldPyramid::kLevels> iterations{0, 0, 0};
  FrameTiming timing;
  Pose pose_world;  // tracking estimate at the time the frame was processed
};

/// Tracking front end plus sliding-window back end.
///
/// The back end runs inline (single_thread) or on its own thread. Either
/// way the tracker only consults refined poses when it creates a keyframe,
/// after the back end has finished with everything sent earlier, so both
/// modes produce the same numbers.
class Odometry {
 public:
  explicit Odometry(OdometryConfig config);
  ~Odometry();
  Odometry(const Odometry&) = delete;
  Odometry& operator=(const Odometry&) = delete;

  TrackStatus process(double timestamp, GrayImage gray, DepthImage depth);
  /// Drains pending mapping work; call before reading final results.
  void finish();

  /// Every processed frame, composed with the latest refined keyframe poses.
  std::vector<TrajectoryEntry> trajectory() const;
  /// Refined keyframe poses in creation order.
  std::vector<TrajectoryEntry> keyframe_trajectory() const;
  const std::vector<FrameDiagnostics>& diagnostics() const { return diagnostics_; }
  std::size_t keyframe_count() const { return keyframe_stamps_.size(); }
  int clamped_eigenvalue_events() const;
  const OdometryConfig& config() const { return config_; }

 private:
  struct MapperMessage {
    Keyframe keyframe;
    int previous_id = -1;
    std::vector<int> previous_ages;
  };

  void create_keyframe(std::shared_ptr<const Frame> frame, const Pose& pose_world, const Pose& motion_prior,
                       FrameDiagnostics& diag);
  void submit(MapperMessage message);
  void map_keyframe(MapperMessage message);
  void wait_idle();
  void mapper_loop();
  Pose refined_pose(int keyframe_id) const;

  OdometryConfig config_;

  // Tracker state.
  std::optional<Keyframe> reference_;
  Pose reference_world_;
  std::optional<Pose> last_world_;
  std::optional<Pose> previous_world_;
  double inlier_sum_ = 0.0;
  int inlier_frames_ = 0;
  int next_keyframe_id_ = 0;
  std::vector<FrameDiagnostics> diagnostics_;
  std::vector<std::pair<int, Pose>> frame_links_;  // (keyframe id, keyframe -> camera)
  std::vector<double> keyframe_stamps_;

  // Back end state, guarded by mutex_ in concurrent mode.
  SlidingWindow window_;
  std::map<int, Pose> refined_;
  std::map<int, double> map_ms_;
  mutable std::mutex mutex_;
  std::condition_variable wake_;
  std::condition_variable idle_;
  std::deque<MapperMessage> queue_;
  bool busy_ = false;
  bool stop_ = false;
  std::thread worker_;
};

/// Diagnostics CSV with a schema version comment and fixed columns.
void write_diagnostics_csv(const Odometry& odometry, const std::filesystem::path& file);

inline constexpr int kDiagnosticsSchemaVersion = 1;

}  // namespace edgevo
