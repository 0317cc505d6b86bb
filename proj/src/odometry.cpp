#include "edgevo/odometry.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace edgevo {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

}  // namespace

void OdometryConfig::validate() const {
  if (!intrinsics.valid()) throw std::invalid_argument("invalid camera intrinsics");
  if (!(preprocess.canny.low > 0.0 && preprocess.canny.low < preprocess.canny.high)) {
    throw std::invalid_argument("canny thresholds must satisfy 0 < low < high");
  }
  if (!(preprocess.distance_cap > 0.0)) throw std::invalid_argument("distance cap must be positive");
  tracking.validate(preprocess.distance_cap);
  selection.validate();
  mapping.validate();
}

Odometry::Odometry(OdometryConfig config) : config_(std::move(config)) {
  config_.validate();
  window_.config = config_.mapping;
  window_.intrinsics = config_.intrinsics;
  if (!config_.single_thread && config_.enable_mapping) worker_ = std::thread([this] { mapper_loop(); });
}

Odometry::~Odometry() {
  if (worker_.joinable()) {
    {
      std::lock_guard lock(mutex_);
      stop_ = true;
    }
    wake_.notify_all();
    worker_.join();
  }
}

TrackStatus Odometry::process(double timestamp, GrayImage gray, DepthImage depth) {
  FrameDiagnostics diag;
  diag.frame = diagnostics_.size();
  diag.timestamp = timestamp;

  const auto t0 = Clock::now();
  auto frame = preprocess_frame(timestamp, std::move(gray), std::move(depth), config_.preprocess);
  diag.timing.preprocess_ms = elapsed_ms(t0);

  if (!reference_) {
    create_keyframe(frame, Pose::identity(), Pose::identity(), diag);
    frame_links_.emplace_back(reference_->id, Pose::identity());
    last_world_ = Pose::identity();
    diag.pose_world = Pose::identity();
    diagnostics_.push_back(diag);
    return TrackStatus::kOk;
  }

  // Constant-velocity prediction in the tracker's world frame.
  Pose predicted = *last_world_;
  if (previous_world_) predicted = *last_world_ * (previous_world_->inverse() * *last_world_);
  const Pose prior = predicted.inverse() * reference_world_;

  const auto t1 = Clock::now();
  const TrackingResult result = track_frame(*reference_, *frame, prior, config_.intrinsics, config_.tracking);
  diag.timing.track_ms = elapsed_ms(t1);
  diag.keyframe_id = reference_->id;
  diag.status = result.status;
  diag.tracked_edges = reference_->edges.size();
  diag.inliers = result.inlier_count;
  diag.mean_residual = result.mean_residual;
  diag.iterations = result.iterations;
  if (result.status != TrackStatus::kOk) {
    diag.pose_world = reference_world_ * result.relative_pose.inverse();
    diagnostics_.push_back(diag);
    return result.status;
  }

  for (std::size_t i : result.inliers) ++reference_->edges[i].track_age;
  const double average = inlier_frames_ > 0 ? inlier_sum_ / inlier_frames_ : 0.0;
  const bool new_keyframe = keyframe_decision(result, result.flow, timestamp - reference_->timestamp, average,
                                              config_.tracking);
  inlier_sum_ += result.inlier_count;
  ++inlier_frames_;

  const Pose current = reference_world_ * result.relative_pose.inverse();
  if (new_keyframe) {
    wait_idle();
    const Pose refined = refined_pose(reference_->id) * result.relative_pose.inverse();
    const Pose back_motion = current.inverse() * *last_world_;  // current camera -> previous camera
    create_keyframe(frame, refined, back_motion, diag);
    frame_links_.emplace_back(reference_->id, Pose::identity());
    previous_world_ = refined * back_motion;
    last_world_ = refined;
    diag.pose_world = refined;
  } else {
    frame_links_.emplace_back(reference_->id, result.relative_pose);
    previous_world_ = last_world_;
    last_world_ = current;
    diag.pose_world = current;
  }
  diagnostics_.push_back(diag);
  return TrackStatus::kOk;
}

void Odometry::create_keyframe(std::shared_ptr<const Frame> frame, const Pose& pose_world, const Pose& motion_prior,
                               FrameDiagnostics& diag) {
  const auto t0 = Clock::now();
  std::vector<EdgePixel> edges;
  if (config_.use_selection) {
    edges = select_edges(*frame, motion_prior, config_.intrinsics, config_.selection).selected_edges();
  } else {
    edges = cull_edges(edge_candidates(frame->edges), frame->depth, config_.selection.canny_high);
  }
  diag.timing.select_ms = elapsed_ms(t0);

  MapperMessage message;
  if (reference_) {
    message.previous_id = reference_->id;
    for (const auto& e : reference_->edges) message.previous_ages.push_back(e.track_age);
  }
  Keyframe kf;
  kf.id = next_keyframe_id_++;
  kf.timestamp = frame->timestamp;
  kf.pose_world = pose_world;
  kf.edges = std::move(edges);
  kf.states.assign(kf.edges.size(), EdgeState::kCandidate);
  kf.frame = std::move(frame);
  message.keyframe = kf;

  reference_ = std::move(kf);
  reference_world_ = pose_world;
  inlier_sum_ = 0.0;
  inlier_frames_ = 0;
  keyframe_stamps_.push_back(reference_->timestamp);
  diag.is_keyframe = true;
  diag.keyframe_id = reference_->id;
  diag.tracked_edges = reference_->edges.size();

  if (!config_.enable_mapping) {
    std::lock_guard lock(mutex_);
    refined_[reference_->id] = pose_world;
    return;
  }
  if (config_.single_thread) {
    const int id = reference_->id;
    map_keyframe(std::move(message));
    diag.timing.map_ms = map_ms_[id];
  } else {
    submit(std::move(message));
  }
}

void Odometry::submit(MapperMessage message) {
  {
    std::lock_guard lock(mutex_);
    queue_.push_back(std::move(message));
  }
  wake_.notify_one();
}

void Odometry::map_keyframe(MapperMessage message) {
  const auto t0 = Clock::now();
  if (Keyframe* previous = window_.find(message.previous_id)) {
    const std::size_t n = std::min(previous->edges.size(), message.previous_ages.size());
    for (std::size_t i = 0; i < n; ++i) previous->edges[i].track_age = message.previous_ages[i];
  }
  const int id = message.keyframe.id;
  window_.keyframes.push_back(std::move(message.keyframe));
  activate_edges(window_);
  window_optimize(window_, config_.mapping.iterations);
  if (const auto victim = choose_marginalization_victim(window_)) marginalize_keyframe(window_, *victim);
  const double ms = elapsed_ms(t0);

  std::lock_guard lock(mutex_);
  for (const auto& kf : window_.keyframes) refined_[kf.id] = kf.pose_world;
  map_ms_[id] = ms;
}

void Odometry::mapper_loop() {
  std::unique_lock lock(mutex_);
  for (;;) {
    wake_.wait(lock, [this] { return stop_ || !queue_.empty(); });
    if (queue_.empty()) return;
    MapperMessage message = std::move(queue_.front());
    queue_.pop_front();
    busy_ = true;
    lock.unlock();
    map_keyframe(std::move(message));
    lock.lock();
    busy_ = false;
    idle_.notify_all();
  }
}

void Odometry::wait_idle() {
  if (!worker_.joinable()) return;
  std::unique_lock lock(mutex_);
  idle_.wait(lock, [this] { return queue_.empty() && !busy_; });
}

void Odometry::finish() {
  wait_idle();
  if (config_.single_thread || !config_.enable_mapping) return;
  std::lock_guard lock(mutex_);
  for (auto& d : diagnostics_) {
    if (!d.is_keyframe) continue;
    const auto it = map_ms_.find(d.keyframe_id);
    if (it != map_ms_.end()) d.timing.map_ms = it->second;
  }
}

Pose Odometry::refined_pose(int keyframe_id) const {
  std::lock_guard lock(mutex_);
  const auto it = refined_.find(keyframe_id);
  if (it == refined_.end()) throw std::logic_error("keyframe " + std::to_string(keyframe_id) + " never mapped");
  return it->second;
}

int Odometry::clamped_eigenvalue_events() const {
  std::lock_guard lock(mutex_);
  return window_.clamped_eigenvalue_events;
}

std::vector<TrajectoryEntry> Odometry::trajectory() const {
  std::vector<TrajectoryEntry> out;
  out.reserve(frame_links_.size());
  std::size_t link = 0;
  for (const auto& d : diagnostics_) {
    if (d.status != TrackStatus::kOk || link >= frame_links_.size()) continue;
    const auto& [id, relative] = frame_links_[link++];
    out.push_back(TrajectoryEntry::from_pose(d.timestamp, refined_pose(id) * relative.inverse()));
  }
  return out;
}

std::vector<TrajectoryEntry> Odometry::keyframe_trajectory() const {
  std::vector<TrajectoryEntry> out;
  for (std::size_t id = 0; id < keyframe_stamps_.size(); ++id) {
    out.push_back(TrajectoryEntry::from_pose(keyframe_stamps_[id], refined_pose(static_cast<int>(id))));
  }
  return out;
}

void write_diagnostics_csv(const Odometry& odometry, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw DatasetError("cannot write diagnostics " + file.string());
  out << "# edgevo diagnostics schema " << kDiagnosticsSchemaVersion << '\n';
  out << "record,frame,timestamp,keyframe_id,is_keyframe,status,tracked_edges,inliers,mean_residual,"
         "iter_l0,iter_l1,iter_l2,preprocess_ms,track_ms,select_ms,map_ms,tx,ty,tz,qx,qy,qz,qw\n";
  auto pose_fields = [&](const Pose& p) {
    const auto q = p.quaternion();
    out << std::setprecision(9) << ',' << p.translation().x() << ',' << p.translation().y() << ','
        << p.translation().z() << ',' << q.x() << ',' << q.y() << ',' << q.z() << ',' << q.w() << '\n';
  };
  for (const auto& d : odometry.diagnostics()) {
    out << "tracked," << d.frame << ',' << std::fixed << std::setprecision(6) << d.timestamp << std::defaultfloat
        << ',' << d.keyframe_id << ',' << (d.is_keyframe ? 1 : 0) << ',' << to_string(d.status) << ','
        << d.tracked_edges << ',' << d.inliers << ',' << std::setprecision(6) << d.mean_residual << ','
        << d.iterations[0] << ',' << d.iterations[1] << ',' << d.iterations[2] << ',' << std::setprecision(4)
        << d.timing.preprocess_ms << ',' << d.timing.track_ms << ',' << d.timing.select_ms << ','
        << d.timing.map_ms;
    pose_fields(d.pose_world);
  }
  const auto keyframes = odometry.keyframe_trajectory();
  for (std::size_t id = 0; id < keyframes.size(); ++id) {
    out << "refined,," << std::fixed << std::setprecision(6) << keyframes[id].timestamp << std::defaultfloat << ','
        << id << ",1,ok,,,,,,,,,,";
    pose_fields(keyframes[id].pose());
  }
}

}  // namespace edgevo
