#include "edgevo/local_mapping.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <stdexcept>

#include "edgevo/tracking.hpp"

namespace edgevo {

void MappingConfig::validate() const {
  if (window_size < 3) throw std::invalid_argument("window size must be >= 3");
  if (iterations < 0) throw std::invalid_argument("window iterations must be >= 0");
  if (activation_cell < 1) throw std::invalid_argument("activation cell must be >= 1");
  if (!(activation_max_angle_deg >= 0.0 && activation_max_angle_deg <= 180.0))
    throw std::invalid_argument("activation angle must be in [0, 180]");
  if (!(huber_delta > 0.0)) throw std::invalid_argument("huber delta must be positive");
  if (!(residual_threshold > 0.0)) throw std::invalid_argument("mapping residual threshold must be positive");
  if (damping < 0.0 || depth_damping < 0.0) throw std::invalid_argument("damping must be non-negative");
  if (!(gradient_margin >= -1.0 && gradient_margin <= 1.0)) throw std::invalid_argument("gradient margin must be in [-1, 1]");
  if (depth_prior_weight < 0.0) throw std::invalid_argument("depth prior weight must be non-negative");
  if (max_step_halvings < 0) throw std::invalid_argument("step halvings must be >= 0");
}

int QuadraticPrior::index_of(int keyframe_id) const {
  const auto it = std::find(keyframe_ids.begin(), keyframe_ids.end(), keyframe_id);
  return it == keyframe_ids.end() ? -1 : static_cast<int>(it - keyframe_ids.begin());
}

int SlidingWindow::index_of(int keyframe_id) const {
  for (std::size_t i = 0; i < keyframes.size(); ++i) {
    if (keyframes[i].id == keyframe_id) return static_cast<int>(i);
  }
  return -1;
}

Keyframe* SlidingWindow::find(int keyframe_id) {
  const int i = index_of(keyframe_id);
  return i < 0 ? nullptr : &keyframes[i];
}

const Keyframe* SlidingWindow::find(int keyframe_id) const {
  const int i = index_of(keyframe_id);
  return i < 0 ? nullptr : &keyframes[i];
}

std::size_t SlidingWindow::active_edge_count() const {
  std::size_t n = 0;
  for (const auto& kf : keyframes) n += std::count(kf.states.begin(), kf.states.end(), EdgeState::kActive);
  return n;
}

namespace {

struct Observation {
  Vec3 host_point;  // host camera frame
  Vec3 world_point;
  Vec3 target_point;
  Vec2 pixel;
  FieldSample sample;
};

// Re-projects a host edge into a target keyframe; nullopt when out of view.
// Matches whose nearest target edge has a gradient disagreeing with the host
// edge by more than `gradient_margin` (dot product) are dropped as well.
std::optional<Observation> observe(const Keyframe& host, const EdgePixel& edge, const Keyframe& target,
                                   const Pose& target_inverse, const CameraIntrinsics& intr,
                                   double gradient_margin) {
  const auto xh = backproject(edge.position(), edge.inv_depth, intr);
  if (!xh) return std::nullopt;
  Observation o;
  o.host_point = *xh;
  o.world_point = host.pose_world * *xh;
  o.target_point = target_inverse * o.world_point;
  const auto q = project(o.target_point, intr);
  if (!q) return std::nullopt;
  const auto s = field_lookup(target.field(0), *q);
  if (!s) return std::nullopt;
  if (gradient_margin > -1.0) {
    const auto& dir = target.frame->edges.direction;
    const Eigen::Vector2i np = to_level0_pixel(s->nearest, 0);
    if (!dir.contains(np.x(), np.y())) return std::nullopt;
    if (edge.gradient_dir.dot(dir(np.x(), np.y()).cast<double>()) < gradient_margin) return std::nullopt;
  }
  o.pixel = *q;
  o.sample = *s;
  return o;
}

WindowResidual linearize_observation(const SlidingWindow& window, int host, int target, std::size_t edge,
                                     const Observation& o) {
  const auto& intr = window.intrinsics;
  const Keyframe& h = window.keyframes[host];
  const Keyframe& t = window.keyframes[target];
  const Mat3 r_tw = t.pose_world.rotation().transpose();
  const Eigen::RowVector3d gj = o.sample.gradient.transpose() * projection_jacobian(o.target_point, intr);

  WindowResidual r;
  r.host = host;
  r.target = target;
  r.edge = edge;
  r.residual = o.sample.distance;
  r.weight = huber_weight(r.residual, window.config.huber_delta);
  r.d_host = gj * r_tw * point_left_jacobian(o.world_point);
  r.d_target = -r.d_host;
  const double rho = h.edges[edge].inv_depth;
  r.d_inv_depth = gj * r_tw * h.pose_world.rotation() * (-o.host_point / rho);

  // Intrinsics enter through the host back-projection and the target projection.
  const Vec2 p = h.edges[edge].position();
  Eigen::Matrix<double, 3, 4> dxh = Eigen::Matrix<double, 3, 4>::Zero();
  dxh(0, 0) = -(p.x() - intr.cx) / (intr.fx * intr.fx * rho);
  dxh(1, 1) = -(p.y() - intr.cy) / (intr.fy * intr.fy * rho);
  dxh(0, 2) = -1.0 / (intr.fx * rho);
  dxh(1, 3) = -1.0 / (intr.fy * rho);
  Eigen::Matrix<double, 2, 4> direct = Eigen::Matrix<double, 2, 4>::Zero();
  direct(0, 0) = o.target_point.x() / o.target_point.z();
  direct(1, 1) = o.target_point.y() / o.target_point.z();
  direct(0, 2) = 1.0;
  direct(1, 3) = 1.0;
  const Mat3 r_th = r_tw * h.pose_world.rotation();
  r.d_intrinsics = o.sample.gradient.transpose() * direct + gj * r_th * dxh;
  return r;
}

std::vector<std::pair<int, std::size_t>> active_edges(const SlidingWindow& window) {
  std::vector<std::pair<int, std::size_t>> out;
  for (std::size_t k = 0; k < window.keyframes.size(); ++k) {
    const auto& states = window.keyframes[k].states;
    for (std::size_t e = 0; e < states.size(); ++e) {
      if (states[e] == EdgeState::kActive) out.emplace_back(static_cast<int>(k), e);
    }
  }
  return out;
}

std::vector<Pose> inverse_poses(const SlidingWindow& window) {
  std::vector<Pose> out;
  out.reserve(window.keyframes.size());
  for (const auto& kf : window.keyframes) out.push_back(kf.pose_world.inverse());
  return out;
}

// Stacked prior tangent d = log(T * T0^-1) over the prior's keyframes.
Eigen::VectorXd prior_delta(const SlidingWindow& window) {
  const auto& prior = window.prior;
  Eigen::VectorXd d = Eigen::VectorXd::Zero(6 * static_cast<int>(prior.keyframe_ids.size()));
  for (std::size_t k = 0; k < prior.keyframe_ids.size(); ++k) {
    const Keyframe* kf = window.find(prior.keyframe_ids[k]);
    if (kf == nullptr) continue;
    d.segment<6>(6 * static_cast<int>(k)) = (kf->pose_world * prior.linearization[k].inverse()).log();
  }
  return d;
}

double prior_energy(const SlidingWindow& window) {
  if (window.prior.empty()) return 0.0;
  const Eigen::VectorXd d = prior_delta(window);
  return 0.5 * d.dot(window.prior.hessian * d) + window.prior.gradient.dot(d);
}

// Normal equations with an explicit map from window index to pose block.
WindowSystem linearize(const SlidingWindow& window, std::span<const WindowResidual> residuals,
                       const std::vector<int>& block_of, int intrinsic_dim) {
  WindowSystem sys;
  const int n = static_cast<int>(window.keyframes.size());
  for (int i = 0; i < n; ++i) {
    if (block_of[i] >= 0) sys.pose_blocks.push_back(i);
  }
  sys.intrinsic_dim = intrinsic_dim;
  const int np = sys.pose_dim();
  const int intr_offset = 6 * static_cast<int>(sys.pose_blocks.size());

  std::map<std::pair<int, std::size_t>, int> depth_index;
  for (const auto& r : residuals) {
    const auto key = std::make_pair(r.host, r.edge);
    if (depth_index.emplace(key, static_cast<int>(sys.depths.size())).second) sys.depths.push_back(key);
  }
  const int nd = static_cast<int>(sys.depths.size());
  sys.hpp = Eigen::MatrixXd::Zero(np, np);
  sys.bp = Eigen::VectorXd::Zero(np);
  sys.hpd = Eigen::MatrixXd::Zero(np, nd);
  sys.hdd = Eigen::VectorXd::Zero(nd);
  sys.bd = Eigen::VectorXd::Zero(nd);

  Eigen::VectorXd jp(np);
  for (const auto& r : residuals) {
    const double w = r.weight;
    sys.cost += huber_cost(r.residual, window.config.huber_delta);
    jp.setZero();
    if (block_of[r.host] >= 0) jp.segment<6>(6 * block_of[r.host]) += r.d_host.transpose();
    if (block_of[r.target] >= 0) jp.segment<6>(6 * block_of[r.target]) += r.d_target.transpose();
    if (intrinsic_dim > 0) jp.segment<4>(intr_offset) = r.d_intrinsics.transpose();
    const int d = depth_index.at({r.host, r.edge});
    sys.hpp.noalias() += w * jp * jp.transpose();
    sys.bp += w * r.residual * jp;
    sys.hpd.col(d) += w * r.d_inv_depth * jp;
    sys.hdd(d) += w * r.d_inv_depth * r.d_inv_depth;
    sys.bd(d) += w * r.d_inv_depth * r.residual;
  }

  // Pull toward the sensor depth; this also pins the scale gauge.
  const double lambda = window.config.depth_prior_weight;
  for (int d = 0; d < nd; ++d) {
    const auto& [k, e] = sys.depths[d];
    const EdgePixel& edge = window.keyframes[k].edges[e];
    if (!(lambda > 0.0) || !(edge.measured_inv_depth > 0.0)) continue;
    const double dr = edge.inv_depth - edge.measured_inv_depth;
    sys.cost += 0.5 * lambda * dr * dr;
    sys.hdd(d) += lambda;
    sys.bd(d) += lambda * dr;
  }

  if (!window.prior.empty()) {
    const auto& prior = window.prior;
    const Eigen::VectorXd delta = prior_delta(window);
    sys.cost += 0.5 * delta.dot(prior.hessian * delta) + prior.gradient.dot(delta);
    const Eigen::VectorXd grad = prior.hessian * delta + prior.gradient;
    const int m = static_cast<int>(prior.keyframe_ids.size());
    for (int a = 0; a < m; ++a) {
      const int ia = window.index_of(prior.keyframe_ids[a]);
      if (ia < 0 || block_of[ia] < 0) continue;
      const int va = 6 * block_of[ia];
      sys.bp.segment<6>(va) += grad.segment<6>(6 * a);
      for (int b = 0; b < m; ++b) {
        const int ib = window.index_of(prior.keyframe_ids[b]);
        if (ib < 0 || block_of[ib] < 0) continue;
        sys.hpp.block<6, 6>(va, 6 * block_of[ib]) += prior.hessian.block<6, 6>(6 * a, 6 * b);
      }
    }
  }
  return sys;
}

std::vector<int> gauge_blocks(const SlidingWindow& window) {
  std::vector<int> block_of(window.keyframes.size(), -1);
  int next = 0;
  for (std::size_t i = 1; i < window.keyframes.size(); ++i) {
    const int id = window.keyframes[i].id;
    if (std::find(window.fixed_poses.begin(), window.fixed_poses.end(), id) != window.fixed_poses.end()) continue;
    block_of[i] = next++;
  }
  return block_of;
}

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

}  // namespace

std::vector<WindowResidual> window_residuals(const SlidingWindow& window,
                                             const std::vector<std::pair<int, std::size_t>>* only) {
  const auto edges = only != nullptr ? *only : active_edges(window);
  const auto inverses = inverse_poses(window);
  const int n = static_cast<int>(window.keyframes.size());
  std::vector<WindowResidual> out;
  for (const auto& [host, e] : edges) {
    const Keyframe& h = window.keyframes[host];
    for (int t = 0; t < n; ++t) {
      if (t == host) continue;
      const auto o = observe(h, h.edges[e], window.keyframes[t], inverses[t], window.intrinsics,
                             window.config.gradient_margin);
      if (!o || o->sample.distance > window.config.residual_threshold) continue;
      out.push_back(linearize_observation(window, host, t, e, *o));
    }
  }
  return out;
}

Eigen::MatrixXd WindowSystem::dense_hessian() const {
  const int np = pose_dim();
  const int nd = static_cast<int>(depths.size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(np + nd, np + nd);
  h.topLeftCorner(np, np) = hpp;
  h.topRightCorner(np, nd) = hpd;
  h.bottomLeftCorner(nd, np) = hpd.transpose();
  h.bottomRightCorner(nd, nd) = hdd.asDiagonal();
  return h;
}

Eigen::VectorXd WindowSystem::dense_gradient() const {
  Eigen::VectorXd b(bp.size() + bd.size());
  b << bp, bd;
  return b;
}

WindowSystem linearize_window(const SlidingWindow& window, std::span<const WindowResidual> residuals) {
  return linearize(window, residuals, gauge_blocks(window), window.config.refine_intrinsics ? 4 : 0);
}

WindowStep solve_schur(const WindowSystem& system, double damping, double depth_damping) {
  const int np = system.pose_dim();
  const Eigen::VectorXd hdd = system.hdd.array() + depth_damping;
  const Eigen::VectorXd hdd_inv = hdd.cwiseInverse();
  WindowStep step;
  step.pose = Eigen::VectorXd::Zero(np);
  if (np > 0) {
    Eigen::MatrixXd s = system.hpp - system.hpd * hdd_inv.asDiagonal() * system.hpd.transpose();
    s.diagonal().array() += damping;
    const Eigen::VectorXd rhs = -system.bp + system.hpd * hdd_inv.cwiseProduct(system.bd);
    step.pose = s.ldlt().solve(rhs);
  }
  step.depth = -(system.bd + system.hpd.transpose() * step.pose).cwiseProduct(hdd_inv);
  return step;
}

WindowStep solve_dense(const WindowSystem& system, double damping, double depth_damping) {
  const int np = system.pose_dim();
  const int nd = static_cast<int>(system.depths.size());
  Eigen::MatrixXd h = system.dense_hessian();
  h.diagonal().head(np).array() += damping;
  h.diagonal().tail(nd).array() += depth_damping;
  const Eigen::VectorXd x = h.ldlt().solve(-system.dense_gradient());
  return {x.head(np), x.tail(nd)};
}

double window_cost(const SlidingWindow& window, std::span<const WindowResidual> observations) {
  const auto inverses = inverse_poses(window);
  const double delta = window.config.huber_delta;
  const double outside = huber_cost(window.config.residual_threshold, delta);
  double cost = 0.0;
  for (const auto& ob : observations) {
    const Keyframe& h = window.keyframes[ob.host];
    const auto o = observe(h, h.edges[ob.edge], window.keyframes[ob.target], inverses[ob.target], window.intrinsics,
                           window.config.gradient_margin);
    cost += o ? huber_cost(o->sample.distance, delta) : outside;
  }
  const double lambda = window.config.depth_prior_weight;
  if (lambda > 0.0) {
    std::set<std::pair<int, std::size_t>> seen;
    for (const auto& ob : observations) {
      if (!seen.emplace(ob.host, ob.edge).second) continue;
      const EdgePixel& e = window.keyframes[ob.host].edges[ob.edge];
      if (e.measured_inv_depth > 0.0) cost += 0.5 * lambda * (e.inv_depth - e.measured_inv_depth) * (e.inv_depth - e.measured_inv_depth);
    }
  }
  return cost + prior_energy(window);
}

WindowOptimizationStats window_optimize(SlidingWindow& window, int iterations) {
  WindowOptimizationStats stats;
  stats.active_edges = window.active_edge_count();
  if (window.keyframes.size() < 2 || stats.active_edges == 0) return stats;
  const auto& cfg = window.config;

  for (int it = 0; it < iterations; ++it) {
    const auto observations = window_residuals(window);
    if (observations.empty()) break;
    const WindowSystem sys = linearize_window(window, observations);
    const WindowStep step = solve_schur(sys, cfg.damping, cfg.depth_damping);
    if (!all_finite(step.pose) || !all_finite(step.depth)) {
      stats.aborted = true;
      break;
    }
    const double cost0 = window_cost(window, observations);
    if (it == 0) stats.initial_cost = cost0;
    stats.residuals = observations.size();

    std::vector<Pose> poses;
    for (const auto& kf : window.keyframes) poses.push_back(kf.pose_world);
    std::vector<double> depths;
    for (const auto& [k, e] : sys.depths) depths.push_back(window.keyframes[k].edges[e].inv_depth);
    const CameraIntrinsics intr0 = window.intrinsics;

    auto apply = [&](double scale) {
      for (std::size_t b = 0; b < sys.pose_blocks.size(); ++b) {
        const int k = sys.pose_blocks[b];
        const Twist d = scale * step.pose.segment<6>(6 * static_cast<int>(b));
        window.keyframes[k].pose_world = apply_increment(d, poses[k]);
      }
      bool ok = true;
      for (std::size_t i = 0; i < sys.depths.size(); ++i) {
        const auto& [k, e] = sys.depths[i];
        const double rho = depths[i] + scale * step.depth(static_cast<int>(i));
        ok = ok && rho > 0.0;
        window.keyframes[k].edges[e].inv_depth = rho;
      }
      if (sys.intrinsic_dim > 0) {
        const auto c = step.pose.tail<4>();
        window.intrinsics.fx = intr0.fx + scale * c(0);
        window.intrinsics.fy = intr0.fy + scale * c(1);
        window.intrinsics.cx = intr0.cx + scale * c(2);
        window.intrinsics.cy = intr0.cy + scale * c(3);
      }
      return ok;
    };
    auto restore = [&] { apply(0.0); };

    double scale = 1.0;
    bool accepted = false;
    double cost1 = cost0;
    for (int h = 0; h <= cfg.max_step_halvings; ++h, scale *= 0.5) {
      if (apply(scale)) {
        cost1 = window_cost(window, observations);
        if (cost1 <= cost0) {
          accepted = true;
          break;
        }
      }
    }
    ++stats.iterations;
    if (!accepted) {
      restore();
      stats.final_cost = cost0;
      break;
    }
    stats.accepted_costs.emplace_back(cost0, cost1);
    stats.final_cost = cost1;
    stats.last_step_norm = scale * std::sqrt(step.pose.squaredNorm() + step.depth.squaredNorm());
  }
  return stats;
}

std::vector<ActivatedEdge> activate_edges(SlidingWindow& window) {
  std::vector<ActivatedEdge> out;
  const int n = static_cast<int>(window.keyframes.size());
  if (n < 2) return out;
  const auto& cfg = window.config;
  const auto& intr = window.intrinsics;
  const Keyframe& newest = window.keyframes.back();
  const Pose newest_inv = newest.pose_world.inverse();
  const int cell = cfg.activation_cell;
  const int cols = (intr.width + cell - 1) / cell;

  struct Candidate {
    int cell;
    int age;
    int host;
    std::size_t edge;
    double residual;
    double angle;
  };
  std::vector<Candidate> candidates;
  for (int k = 0; k + 1 < n; ++k) {
    const Keyframe& kf = window.keyframes[k];
    const Pose rel = newest_inv * kf.pose_world;
    for (std::size_t e = 0; e < kf.edges.size(); ++e) {
      if (kf.states[e] != EdgeState::kCandidate) continue;
      const auto& edge = kf.edges[e];
      const auto q = warp(edge.position(), edge.inv_depth, rel, intr);
      if (!q) continue;
      const auto s = field_lookup(newest.field(0), *q);
      if (!s) continue;
      const auto q2 = warp_unbounded(edge.position() + edge.gradient_dir, edge.inv_depth, rel, intr);
      if (!q2 || (*q2 - *q).norm() == 0.0) continue;
      const Vec2 reprojected = (*q2 - *q).normalized();
      const Eigen::Vector2i np = to_level0_pixel(s->nearest, 0);
      const Vec2 current = newest.frame->edges.direction(np.x(), np.y()).cast<double>();
      const double dot = std::clamp(reprojected.dot(current), -1.0, 1.0);
      const double angle = std::acos(dot) * 180.0 / std::numbers::pi;
      const int cx = static_cast<int>(q->x()) / cell;
      const int cy = static_cast<int>(q->y()) / cell;
      candidates.push_back({cy * cols + cx, edge.track_age, k, e, s->distance, angle});
    }
  }
  if (candidates.empty()) return out;

  std::vector<double> residuals;
  residuals.reserve(candidates.size());
  for (const auto& c : candidates) residuals.push_back(c.residual);
  const std::size_t mid = residuals.size() / 2;
  std::nth_element(residuals.begin(), residuals.begin() + mid, residuals.end());
  double median = residuals[mid];
  if (residuals.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(residuals.begin(), residuals.begin() + mid));
  }

  // Per cell: oldest track wins; ties go to the older keyframe, then lower index.
  std::map<int, const Candidate*> best;
  for (const auto& c : candidates) {
    if (c.residual > median || c.angle > cfg.activation_max_angle_deg) continue;
    auto [it, inserted] = best.emplace(c.cell, &c);
    if (inserted) continue;
    const Candidate* b = it->second;
    if (c.age > b->age || (c.age == b->age && (c.host < b->host || (c.host == b->host && c.edge < b->edge)))) {
      it->second = &c;
    }
  }
  for (const auto& [cell_id, c] : best) {
    window.keyframes[c->host].states[c->edge] = EdgeState::kActive;
    out.push_back({window.keyframes[c->host].id, c->edge, c->residual});
  }
  return out;
}

double visible_edge_fraction(const SlidingWindow& window, int keyframe_index) {
  const int n = static_cast<int>(window.keyframes.size());
  const Keyframe& kf = window.keyframes[keyframe_index];
  std::size_t edges = 0;
  std::size_t visible = 0;
  for (int t = 0; t < n; ++t) {
    if (t == keyframe_index) continue;
    const Pose rel = window.keyframes[t].pose_world.inverse() * kf.pose_world;
    for (std::size_t e = 0; e < kf.edges.size(); ++e) {
      if (kf.states[e] == EdgeState::kMarginalized) continue;
      ++edges;
      if (warp(kf.edges[e].position(), kf.edges[e].inv_depth, rel, window.intrinsics)) ++visible;
    }
  }
  return edges == 0 ? 0.0 : static_cast<double>(visible) / static_cast<double>(edges);
}

std::optional<int> choose_marginalization_victim(const SlidingWindow& window) {
  const int n = static_cast<int>(window.keyframes.size());
  if (n < window.config.window_size || n < 3) return std::nullopt;
  const Vec3 newest = window.keyframes.back().pose_world.translation();
  std::vector<double> distance(n - 2);
  double max_distance = 0.0;
  for (int k = 0; k < n - 2; ++k) {
    distance[k] = (window.keyframes[k].pose_world.translation() - newest).norm();
    max_distance = std::max(max_distance, distance[k]);
  }
  int best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < n - 2; ++k) {
    const double nd = max_distance > 0.0 ? distance[k] / max_distance : 0.0;
    const double score = 0.5 * nd + 0.5 * (1.0 - visible_edge_fraction(window, k));
    if (score > best_score) {
      best_score = score;
      best = k;
    }
  }
  return window.keyframes[best].id;
}

Quadratic schur_marginalize(const Eigen::MatrixXd& hessian, const Eigen::VectorXd& gradient,
                            std::span<const int> remove) {
  const int n = static_cast<int>(hessian.rows());
  std::vector<bool> gone(n, false);
  for (int i : remove) {
    if (i < 0 || i >= n) throw std::out_of_range("schur_marginalize index out of range");
    gone[i] = true;
  }
  std::vector<int> keep;
  std::vector<int> drop;
  for (int i = 0; i < n; ++i) (gone[i] ? drop : keep).push_back(i);
  const int nk = static_cast<int>(keep.size());
  const int nm = static_cast<int>(drop.size());

  Eigen::MatrixXd hkk(nk, nk), hkm(nk, nm), hmm(nm, nm);
  Eigen::VectorXd bk(nk), bm(nm);
  for (int a = 0; a < nk; ++a) {
    bk(a) = gradient(keep[a]);
    for (int b = 0; b < nk; ++b) hkk(a, b) = hessian(keep[a], keep[b]);
    for (int b = 0; b < nm; ++b) hkm(a, b) = hessian(keep[a], drop[b]);
  }
  for (int a = 0; a < nm; ++a) {
    bm(a) = gradient(drop[a]);
    for (int b = 0; b < nm; ++b) hmm(a, b) = hessian(drop[a], drop[b]);
  }
  if (nm == 0) return {hkk, bk};

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (hmm + hmm.transpose()));
  const Eigen::VectorXd& ev = eig.eigenvalues();
  const double cutoff = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(nm);
  for (int i = 0; i < nm; ++i) {
    if (ev(i) > cutoff) inv(i) = 1.0 / ev(i);
  }
  const Eigen::MatrixXd hmm_pinv = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  Quadratic q;
  q.hessian = hkk - hkm * hmm_pinv * hkm.transpose();
  q.hessian = 0.5 * (q.hessian + q.hessian.transpose());
  q.gradient = bk - hkm * hmm_pinv * bm;
  return q;
}

int clamp_to_psd(Eigen::MatrixXd& m, double tolerance) {
  if (m.size() == 0) return 0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = eig.eigenvalues();
  const double floor = -tolerance * std::max(1.0, ev.cwiseAbs().maxCoeff());
  int clamped = 0;
  for (int i = 0; i < ev.size(); ++i) {
    if (ev(i) < 0.0) {
      if (ev(i) < floor) ++clamped;
      ev(i) = 0.0;
    }
  }
  m = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
  m = 0.5 * (m + m.transpose());
  return clamped;
}

void marginalize_keyframe(SlidingWindow& window, int victim_id) {
  const int victim = window.index_of(victim_id);
  if (victim < 0) throw std::invalid_argument("marginalization victim not in window");
  const int n = static_cast<int>(window.keyframes.size());
  const auto inverses = inverse_poses(window);

  auto observed_recently = [&](int host, std::size_t e) {
    if (host >= n - 2) return true;
    const Keyframe& h = window.keyframes[host];
    for (int t = n - 2; t < n; ++t) {
      const auto o = observe(h, h.edges[e], window.keyframes[t], inverses[t], window.intrinsics,
                             window.config.gradient_margin);
      if (o && o->sample.distance <= window.config.residual_threshold) return true;
    }
    return false;
  };

  std::vector<std::pair<int, std::size_t>> doomed;
  for (int k = 0; k < n; ++k) {
    const auto& states = window.keyframes[k].states;
    for (std::size_t e = 0; e < states.size(); ++e) {
      if (states[e] != EdgeState::kActive) continue;
      if (k == victim || !observed_recently(k, e)) doomed.emplace_back(k, e);
    }
  }
  const auto residuals = window_residuals(window, &doomed);
  const bool prior_touches_victim = window.prior.index_of(victim_id) >= 0;

  if (!residuals.empty() || prior_touches_victim) {
    std::vector<int> block_of(n);
    for (int i = 0; i < n; ++i) block_of[i] = i;
    const WindowSystem sys = linearize(window, residuals, block_of, 0);

    // Inverse depths first: each is a scalar coupled only to poses.
    Eigen::MatrixXd h = sys.hpp;
    Eigen::VectorXd b = sys.bp;
    for (int d = 0; d < static_cast<int>(sys.depths.size()); ++d) {
      if (!(sys.hdd(d) > 0.0)) continue;
      const Eigen::VectorXd col = sys.hpd.col(d);
      h -= col * col.transpose() / sys.hdd(d);
      b -= col * sys.bd(d) / sys.hdd(d);
    }
    std::vector<int> victim_block(6);
    for (int i = 0; i < 6; ++i) victim_block[i] = 6 * victim + i;
    Quadratic q = schur_marginalize(h, b, victim_block);
    if (clamp_to_psd(q.hessian) > 0) ++window.clamped_eigenvalue_events;

    QuadraticPrior prior;
    for (int k = 0; k < n; ++k) {
      if (k == victim) continue;
      prior.keyframe_ids.push_back(window.keyframes[k].id);
      prior.linearization.push_back(window.keyframes[k].pose_world);
    }
    prior.hessian = std::move(q.hessian);
    prior.gradient = std::move(q.gradient);
    window.prior = std::move(prior);
  }

  for (const auto& [k, e] : doomed) window.keyframes[k].states[e] = EdgeState::kMarginalized;
  window.keyframes.erase(window.keyframes.begin() + victim);
  std::erase(window.fixed_poses, victim_id);
}

}  // namespace edgevo
