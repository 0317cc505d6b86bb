#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "edgevo/geometry.hpp"
#include "edgevo/keyframe.hpp"

namespace edgevo {

struct MappingConfig {
  int window_size = 7;
  int iterations = 6;
  int activation_cell = 20;                 // pixels
  double activation_max_angle_deg = 30.0;
  double huber_delta = 1.0;
  double residual_threshold = 2.5;          // level-0 pixels
  double gradient_margin = 0.6;             // min gradient dot product; -1 disables
  double damping = 1e-8;
  double depth_damping = 1e-6;              // added to each inverse-depth diagonal
  double depth_prior_weight = 1e5;          // px^2 per (1/m)^2 toward the measured inverse depth
  int max_step_halvings = 5;
  bool refine_intrinsics = false;

  void validate() const;
};

/// Quadratic prior 0.5 d^T H d + g^T d over the poses of `keyframe_ids`,
/// where d_k = log(T_k * T0_k^-1) and T0 is the linearization point.
struct QuadraticPrior {
  std::vector<int> keyframe_ids;
  std::vector<Pose> linearization;
  Eigen::MatrixXd hessian;
  Eigen::VectorXd gradient;

  bool empty() const { return keyframe_ids.empty(); }
  /// Block index of a keyframe, or -1.
  int index_of(int keyframe_id) const;
};

struct SlidingWindow {
  MappingConfig config;
  CameraIntrinsics intrinsics;
  std::vector<Keyframe> keyframes;  // oldest first
  QuadraticPrior prior;
  /// Keyframes whose pose is held constant in addition to the gauge keyframe.
  std::vector<int> fixed_poses;
  int clamped_eigenvalue_events = 0;

  int index_of(int keyframe_id) const;
  Keyframe* find(int keyframe_id);
  const Keyframe* find(int keyframe_id) const;
  std::size_t active_edge_count() const;
};

struct ActivatedEdge {
  int keyframe_id = -1;
  std::size_t edge = 0;
  double residual = 0.0;
};

/// Activates candidate edges of older keyframes using the newest keyframe:
/// one edge per grid cell among those at or below the median residual and
/// within the gradient-angle bound, preferring the longest-tracked.
std::vector<ActivatedEdge> activate_edges(SlidingWindow& window);

/// One host-edge-target observation linearized at the current state.
struct WindowResidual {
  int host = 0;    // keyframe index in the window
  int target = 0;  // keyframe index in the window
  std::size_t edge = 0;
  double residual = 0.0;
  double weight = 1.0;
  Row6 d_host = Row6::Zero();
  Row6 d_target = Row6::Zero();
  double d_inv_depth = 0.0;
  Eigen::Matrix<double, 1, 4> d_intrinsics = Eigen::Matrix<double, 1, 4>::Zero();
};

/// Residuals of the active edges (or of `only`, when given) against every
/// other keyframe. Observations outside the view or above the threshold are
/// skipped.
std::vector<WindowResidual> window_residuals(const SlidingWindow& window,
                                             const std::vector<std::pair<int, std::size_t>>* only = nullptr);

/// Normal equations in block form: pose (+ intrinsics) part dense, inverse
/// depths diagonal.
struct WindowSystem {
  std::vector<int> pose_blocks;  // window index of each free pose block
  int intrinsic_dim = 0;
  std::vector<std::pair<int, std::size_t>> depths;  // (window index, edge)
  Eigen::MatrixXd hpp;
  Eigen::VectorXd bp;
  Eigen::MatrixXd hpd;
  Eigen::VectorXd hdd;
  Eigen::VectorXd bd;
  double cost = 0.0;

  int pose_dim() const { return static_cast<int>(pose_blocks.size()) * 6 + intrinsic_dim; }
  Eigen::MatrixXd dense_hessian() const;
  Eigen::VectorXd dense_gradient() const;
};

/// Linearizes residuals and prior. Gauge keyframes (the oldest plus
/// `fixed_poses`) get no variables.
WindowSystem linearize_window(const SlidingWindow& window, std::span<const WindowResidual> residuals);

struct WindowStep {
  Eigen::VectorXd pose;
  Eigen::VectorXd depth;
};

/// Inverse depths eliminated by Schur complement, then back-substituted.
WindowStep solve_schur(const WindowSystem& system, double damping, double depth_damping);
/// Reference: direct solve of the full system.
WindowStep solve_dense(const WindowSystem& system, double damping, double depth_damping);

struct WindowOptimizationStats {
  int iterations = 0;
  std::vector<std::pair<double, double>> accepted_costs;
  std::size_t residuals = 0;
  std::size_t active_edges = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool aborted = false;
  double last_step_norm = 0.0;
};

/// Gauss-Newton over window poses, active inverse depths and (optionally)
/// intrinsics, with step halving.
WindowOptimizationStats window_optimize(SlidingWindow& window, int iterations);

/// Robust cost of the current state on a fixed observation set plus prior.
double window_cost(const SlidingWindow& window, std::span<const WindowResidual> observations);

/// Keyframe to drop once the window is full, never one of the newest two.
std::optional<int> choose_marginalization_victim(const SlidingWindow& window);

/// Fraction of a keyframe's non-marginalized edges that re-project into
/// view, averaged over the other window keyframes.
double visible_edge_fraction(const SlidingWindow& window, int keyframe_index);

struct Quadratic {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd gradient;
};

/// Schur complement of 0.5 x^T H x + b^T x onto the complement of `remove`.
/// The eliminated block is inverted through its eigen-decomposition so
/// rank-deficient blocks are handled.
Quadratic schur_marginalize(const Eigen::MatrixXd& hessian, const Eigen::VectorXd& gradient,
                            std::span<const int> remove);

/// Clamps negative eigenvalues to zero. Returns how many were below
/// -tolerance times the largest eigenvalue magnitude (round-off is not counted).
int clamp_to_psd(Eigen::MatrixXd& m, double tolerance = 1e-9);

/// Folds the victim's active edges, edges unseen in the newest two keyframes
/// and the victim pose into the prior, then removes the keyframe.
void marginalize_keyframe(SlidingWindow& window, int victim_id);

}  // namespace edgevo
