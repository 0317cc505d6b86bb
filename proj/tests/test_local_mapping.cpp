#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <random>

#include "edgevo/local_mapping.hpp"
#include "support.hpp"

using namespace edgevo;

namespace {

constexpr double kBaseline = 10.0 / (525.0 * 0.5);  // 10 px shift at 2 m

// A frame whose edge map is `mask` with the given gradient direction on
// every edge pixel.
std::shared_ptr<Frame> mask_frame(const Image<std::uint8_t>& mask, const Eigen::Vector2f& dir = {1.0f, 0.0f}) {
  auto f = std::make_shared<Frame>();
  f->edges.mask = mask;
  f->edges.magnitude = Image<float>(mask.width(), mask.height(), 0.0f);
  f->edges.direction = Image<Eigen::Vector2f>(mask.width(), mask.height(), Eigen::Vector2f::Zero());
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask(x, y)) continue;
      f->edges.pixels.emplace_back(x, y);
      f->edges.magnitude(x, y) = 200.0f;
      f->edges.direction(x, y) = dir;
    }
  }
  f->pyramid = build_pyramid(distance_transform(f->edges), 30.0);
  return f;
}

// Points on a fronto-parallel plane at 2 m seen by cameras spaced by
// kBaseline along x: every point shifts by exactly 10 px per camera.
std::vector<Eigen::Vector2i> plane_pattern() {
  std::vector<Eigen::Vector2i> p;
  for (int i = 0; i < 7; ++i) p.emplace_back(250 + 5 * i, 150 + 9 * i);    // diagonal
  for (int i = 0; i < 7; ++i) p.emplace_back(330, 300 + 6 * i);            // vertical
  for (int i = 0; i < 6; ++i) p.emplace_back(200 + 7 * i, 340 - 3 * i);    // shallow
  return p;
}

SlidingWindow plane_window(int keyframes) {
  SlidingWindow w;
  const auto pattern = plane_pattern();
  for (int k = 0; k < keyframes; ++k) {
    Image<std::uint8_t> mask(640, 480, 0);
    for (const auto& p : pattern) mask(p.x() - 10 * k, p.y()) = 1;
    Keyframe kf;
    kf.id = k;
    kf.pose_world = Pose(Mat3::Identity(), Vec3(kBaseline * k, 0.0, 0.0));
    kf.frame = mask_frame(mask);
    for (const auto& p : pattern) {
      EdgePixel e;
      e.pixel = Eigen::Vector2i(p.x() - 10 * k, p.y());
      e.inv_depth = 0.5;
      e.gradient_dir = Vec2(1.0, 0.0);
      kf.edges.push_back(e);
    }
    kf.states.assign(kf.edges.size(), EdgeState::kCandidate);
    w.keyframes.push_back(std::move(kf));
  }
  return w;
}

// Smooth, non-edge field so bilinear derivatives are well defined.
std::shared_ptr<Frame> smooth_frame(double phase) {
  auto f = std::make_shared<Frame>();
  DistanceField field;
  field.distance = Image<float>(640, 480, 0.0f);
  field.nearest = Image<Eigen::Vector2f>(640, 480, Eigen::Vector2f::Zero());
  field.has_edges = true;
  for (int y = 0; y < 480; ++y) {
    for (int x = 0; x < 640; ++x) {
      field.distance(x, y) = static_cast<float>(1.0 + 0.8 * std::sin(x / 17.0 + phase) * std::cos(y / 23.0 - phase));
    }
  }
  f->pyramid.levels[0] = field;
  f->edges.mask = Image<std::uint8_t>(640, 480, 0);
  f->edges.direction = Image<Eigen::Vector2f>(640, 480, Eigen::Vector2f::Zero());
  return f;
}

double residual_of(const SlidingWindow& w, int host, int target, std::size_t edge) {
  const std::vector<std::pair<int, std::size_t>> only{{host, edge}};
  for (const auto& r : window_residuals(w, &only)) {
    if (r.target == target) return r.residual;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

// The bilinear field has kinks on pixel boundaries; a perturbation that
// straddles one is checked against the one-sided difference that does not.
double derivative_error(double analytic, double minus, double centre, double plus, double eps) {
  const double central = relative_error((plus - minus) / (2.0 * eps), analytic);
  const double forward = relative_error((plus - centre) / eps, analytic);
  const double backward = relative_error((centre - minus) / eps, analytic);
  return std::min({central, forward, backward});
}

}  // namespace

TEST(WindowResidual, JacobiansMatchCentralDifferences) {
  std::mt19937_64 rng(11);
  SlidingWindow w;
  w.config.residual_threshold = 10.0;
  w.config.gradient_margin = -1.0;  // the smooth fields carry no edge directions
  const Pose poses[3] = {Pose::identity(), Pose::exp(test::random_twist(rng, 0.05, 0.02)),
                         Pose::exp(test::random_twist(rng, 0.05, 0.02))};
  for (int k = 0; k < 3; ++k) {
    Keyframe kf;
    kf.id = k;
    kf.pose_world = poses[k];
    kf.frame = smooth_frame(0.7 * k);
    std::uniform_real_distribution<double> ux(200.0, 440.0), uy(150.0, 330.0), rho(0.3, 0.8);
    for (int i = 0; i < 30; ++i) {
      EdgePixel e;
      e.pixel = Eigen::Vector2i(static_cast<int>(ux(rng)), static_cast<int>(uy(rng)));
      e.inv_depth = rho(rng);
      kf.edges.push_back(e);
    }
    kf.states.assign(kf.edges.size(), EdgeState::kActive);
    w.keyframes.push_back(std::move(kf));
  }

  const auto residuals = window_residuals(w);
  ASSERT_GT(residuals.size(), 100u);
  const double eps = 1e-6;
  double worst = 0.0;
  for (const auto& r : residuals) {
    for (int i = 0; i < 6; ++i) {
      for (int which : {r.host, r.target}) {
        SlidingWindow plus = w, minus = w;
        plus.keyframes[which].pose_world = Pose::exp(eps * Twist::Unit(i)) * w.keyframes[which].pose_world;
        minus.keyframes[which].pose_world = Pose::exp(-eps * Twist::Unit(i)) * w.keyframes[which].pose_world;
        const double analytic = which == r.host ? r.d_host(i) : r.d_target(i);
        worst = std::max(worst, derivative_error(analytic, residual_of(minus, r.host, r.target, r.edge), r.residual,
                                                 residual_of(plus, r.host, r.target, r.edge), eps));
      }
    }
    SlidingWindow plus = w, minus = w;
    plus.keyframes[r.host].edges[r.edge].inv_depth += eps;
    minus.keyframes[r.host].edges[r.edge].inv_depth -= eps;
    worst = std::max(worst, derivative_error(r.d_inv_depth, residual_of(minus, r.host, r.target, r.edge), r.residual,
                                             residual_of(plus, r.host, r.target, r.edge), eps));

    for (int c = 0; c < 4; ++c) {
      SlidingWindow p2 = w, m2 = w;
      double* fields_p[4] = {&p2.intrinsics.fx, &p2.intrinsics.fy, &p2.intrinsics.cx, &p2.intrinsics.cy};
      double* fields_m[4] = {&m2.intrinsics.fx, &m2.intrinsics.fy, &m2.intrinsics.cx, &m2.intrinsics.cy};
      *fields_p[c] += 1e-4;
      *fields_m[c] -= 1e-4;
      worst = std::max(worst, derivative_error(r.d_intrinsics(c), residual_of(m2, r.host, r.target, r.edge), r.residual,
                                               residual_of(p2, r.host, r.target, r.edge), 1e-4));
    }
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(WindowOptimize, ExactGeometryHasZeroResidual) {
  SlidingWindow w = plane_window(2);
  w.keyframes[0].states.assign(w.keyframes[0].edges.size(), EdgeState::kActive);
  const auto residuals = window_residuals(w);
  ASSERT_FALSE(residuals.empty());
  for (const auto& r : residuals) EXPECT_EQ(r.residual, 0.0);
}

TEST(WindowOptimize, RecoversPerturbedInverseDepth) {
  SlidingWindow w;
  Image<std::uint8_t> mask0(640, 480, 0), mask1(640, 480, 0);
  for (int y = 0; y < 480; ++y) {
    mask0(300, y) = 1;
    mask1(290, y) = 1;
  }
  for (int k = 0; k < 2; ++k) {
    Keyframe kf;
    kf.id = k;
    kf.pose_world = Pose(Mat3::Identity(), Vec3(kBaseline * k, 0.0, 0.0));
    kf.frame = mask_frame(k == 0 ? mask0 : mask1);
    w.keyframes.push_back(std::move(kf));
  }
  EdgePixel e;
  e.pixel = Eigen::Vector2i(300, 240);
  e.inv_depth = 0.5;
  e.gradient_dir = Vec2(1.0, 0.0);
  w.keyframes[0].edges = {e};
  w.keyframes[0].states = {EdgeState::kActive};
  w.fixed_poses = {1};  // one scalar residual: hold both poses

  EXPECT_DOUBLE_EQ(window_residuals(w).at(0).residual, 0.0);
  w.keyframes[0].edges[0].inv_depth = 0.55;
  EXPECT_NEAR(window_residuals(w).at(0).residual, 1.0, 1e-9);
  window_optimize(w, 6);
  EXPECT_NEAR(w.keyframes[0].edges[0].inv_depth / 0.5 - 1.0, 0.0, 1e-4);
}

TEST(WindowOptimize, PerfectWindowIsFixedPoint) {
  SlidingWindow w = plane_window(3);
  for (auto& kf : w.keyframes) kf.states.assign(kf.edges.size(), EdgeState::kActive);
  const auto residuals = window_residuals(w);
  ASSERT_GT(residuals.size(), 40u);
  const auto sys = linearize_window(w, residuals);
  const auto step = solve_schur(sys, w.config.damping, w.config.depth_damping);
  EXPECT_LT(std::sqrt(step.pose.squaredNorm() + step.depth.squaredNorm()), 1e-8);

  const SlidingWindow before = w;
  window_optimize(w, 6);
  for (std::size_t k = 0; k < w.keyframes.size(); ++k) {
    EXPECT_LT((w.keyframes[k].pose_world.inverse() * before.keyframes[k].pose_world).log().norm(), 1e-8);
    for (std::size_t e = 0; e < w.keyframes[k].edges.size(); ++e) {
      EXPECT_NEAR(w.keyframes[k].edges[e].inv_depth, before.keyframes[k].edges[e].inv_depth, 1e-8);
    }
  }
}

TEST(WindowOptimize, SchurMatchesDenseSolve) {
  SlidingWindow w = plane_window(3);
  std::mt19937_64 rng(5);
  for (auto& kf : w.keyframes) kf.states.assign(kf.edges.size(), EdgeState::kActive);
  // Three keyframes, 20 edges each; perturb to get non-zero residuals.
  for (int k = 1; k < 3; ++k) {
    w.keyframes[k].pose_world = Pose::exp(test::random_twist(rng, 0.002, 0.001)) * w.keyframes[k].pose_world;
  }
  std::uniform_real_distribution<double> jitter(-0.01, 0.01);
  for (auto& kf : w.keyframes) {
    for (auto& e : kf.edges) e.inv_depth += jitter(rng);
  }
  const auto residuals = window_residuals(w);
  const auto sys = linearize_window(w, residuals);
  ASSERT_EQ(sys.depths.size(), 60u);
  ASSERT_EQ(sys.pose_dim(), 12);
  // Scale is a gauge freedom of the window (translations vs inverse
  // depths); stronger damping keeps both solves well conditioned.
  const auto schur = solve_schur(sys, 1e-6, 1e-3);
  const auto dense = solve_dense(sys, 1e-6, 1e-3);
  EXPECT_LT((schur.pose - dense.pose).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((schur.depth - dense.depth).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(WindowOptimize, CostNonIncreasingAndImproves) {
  const auto scene = named_scene("compact", 3);
  const auto traj = generate_trajectory(TrajectoryKind::kOrbit, 9, 2.0 * std::numbers::pi / 200.0);
  SlidingWindow w;
  for (int k = 0; k < 3; ++k) {
    const Pose gt = traj[4 * k];
    w.keyframes.push_back(test::make_keyframe(k, gt, test::rendered_frame(scene, gt, k)));
  }
  for (auto& kf : w.keyframes) {
    for (std::size_t e = 0; e < kf.edges.size(); e += 3) kf.states[e] = EdgeState::kActive;
  }
  std::mt19937_64 rng(9);
  const Pose truth1 = w.keyframes[1].pose_world;
  const Pose truth2 = w.keyframes[2].pose_world;
  w.keyframes[1].pose_world = Pose::exp(test::random_twist(rng, 0.004, 0.002)) * truth1;
  w.keyframes[2].pose_world = Pose::exp(test::random_twist(rng, 0.004, 0.002)) * truth2;
  const double before = (w.keyframes[1].pose_world.translation() - truth1.translation()).norm() +
                        (w.keyframes[2].pose_world.translation() - truth2.translation()).norm();
  const auto stats = window_optimize(w, 6);
  ASSERT_FALSE(stats.accepted_costs.empty());
  for (const auto& [c0, c1] : stats.accepted_costs) EXPECT_LE(c1, c0);
  const double after = (w.keyframes[1].pose_world.translation() - truth1.translation()).norm() +
                       (w.keyframes[2].pose_world.translation() - truth2.translation()).norm();
  EXPECT_LT(after, before);
}

namespace {

// Host keyframe and newest keyframe share the identity pose, so host edges
// re-project onto their own pixels and residuals are set by the newest mask.
SlidingWindow activation_window(const std::vector<EdgePixel>& host_edges, const Image<std::uint8_t>& newest_mask,
                                const Eigen::Vector2f& newest_dir = {1.0f, 0.0f}) {
  SlidingWindow w;
  Keyframe host;
  host.id = 0;
  host.frame = mask_frame(Image<std::uint8_t>(640, 480, 0));
  host.edges = host_edges;
  host.states.assign(host_edges.size(), EdgeState::kCandidate);
  Keyframe newest;
  newest.id = 1;
  newest.frame = mask_frame(newest_mask, newest_dir);
  w.keyframes = {host, newest};
  return w;
}

EdgePixel edge_at(int x, int y, int age = 0, Vec2 dir = Vec2(1.0, 0.0)) {
  EdgePixel e;
  e.pixel = Eigen::Vector2i(x, y);
  e.inv_depth = 0.5;
  e.gradient_dir = dir;
  e.track_age = age;
  return e;
}

}  // namespace

TEST(ActivateEdges, ResidualAboveMedianRejected) {
  Image<std::uint8_t> mask(640, 480, 0);
  for (int y = 0; y < 480; ++y) {
    mask(100, y) = 1;  // residual 0 for x = 100
    mask(301, y) = 1;  // residual 1 for x = 300
    mask(502, y) = 1;  // residual 2 for x = 500
  }
  auto w = activation_window({edge_at(100, 100), edge_at(300, 100), edge_at(500, 100)}, mask);
  const auto activated = activate_edges(w);
  ASSERT_EQ(activated.size(), 2u);
  EXPECT_EQ(w.keyframes[0].states[0], EdgeState::kActive);
  EXPECT_EQ(w.keyframes[0].states[1], EdgeState::kActive);
  EXPECT_EQ(w.keyframes[0].states[2], EdgeState::kCandidate);
}

TEST(ActivateEdges, OlderTrackWinsCell) {
  Image<std::uint8_t> mask(640, 480, 0);
  for (int y = 0; y < 480; ++y) mask(105, y) = mask(108, y) = 1;
  auto w = activation_window({edge_at(105, 105, 2), edge_at(108, 110, 5)}, mask);
  const auto activated = activate_edges(w);
  ASSERT_EQ(activated.size(), 1u);
  EXPECT_EQ(activated[0].edge, 1u);
  EXPECT_EQ(w.keyframes[0].states[0], EdgeState::kCandidate);
}

TEST(ActivateEdges, GradientAngleBound) {
  Image<std::uint8_t> mask(640, 480, 0);
  for (int y = 0; y < 480; ++y) mask(100, y) = mask(300, y) = 1;
  auto rotated = [](double deg) {
    const double r = deg * std::numbers::pi / 180.0;
    return Vec2(std::cos(r), std::sin(r));
  };
  auto w = activation_window({edge_at(100, 100, 0, rotated(31.0)), edge_at(300, 100, 0, rotated(29.0))}, mask);
  activate_edges(w);
  EXPECT_EQ(w.keyframes[0].states[0], EdgeState::kCandidate);
  EXPECT_EQ(w.keyframes[0].states[1], EdgeState::kActive);
}

TEST(Marginalization, VictimNoneUnderCapacity) {
  SlidingWindow w = plane_window(6);
  w.config.window_size = 7;
  EXPECT_FALSE(choose_marginalization_victim(w).has_value());
}

TEST(Marginalization, NewestTwoNeverChosen) {
  std::mt19937_64 rng(3);
  const SlidingWindow base = plane_window(7);
  for (int trial = 0; trial < 50; ++trial) {
    SlidingWindow w = base;
    for (auto& kf : w.keyframes) kf.pose_world = Pose::exp(test::random_twist(rng, 0.5, 0.3));
    const auto victim = choose_marginalization_victim(w);
    ASSERT_TRUE(victim.has_value());
    EXPECT_LT(w.index_of(*victim), 5);
  }
}

TEST(Marginalization, ZeroVisibilityPreferredAtEqualDistance) {
  SlidingWindow w = plane_window(7);
  for (int k = 2; k < 7; ++k) w.keyframes[k].pose_world = Pose(Mat3::Identity(), Vec3(0.0, 0.0, 0.0));
  w.keyframes[6].pose_world = Pose(Mat3::Identity(), Vec3(0.0, 0.0, 0.5));
  for (int k = 2; k < 6; ++k) w.keyframes[k].pose_world = Pose(Mat3::Identity(), Vec3(0.0, 0.0, 0.3));
  // Equal distance 1 m from the newest; keyframe 0 faces backwards.
  const Mat3 flip = Eigen::AngleAxisd(std::numbers::pi, Vec3::UnitY()).toRotationMatrix();
  w.keyframes[0].pose_world = Pose(flip, Vec3(-1.0, 0.0, 0.5));
  w.keyframes[1].pose_world = Pose(Mat3::Identity(), Vec3(1.0, 0.0, 0.5));
  EXPECT_EQ(visible_edge_fraction(w, 0), 0.0);
  // Keyframe 1 is seen by all five forward-facing keyframes.
  EXPECT_NEAR(visible_edge_fraction(w, 1), 5.0 / 6.0, 1e-12);
  EXPECT_EQ(choose_marginalization_victim(w), 0);
}

TEST(Marginalization, HandComputedSchurComplement) {
  Eigen::MatrixXd a(2, 2);
  a << 4.0, 2.0, 2.0, 3.0;
  Eigen::VectorXd b(2);
  b << 1.0, 2.0;
  const std::vector<int> remove{0};
  const auto q = schur_marginalize(a, b, remove);
  ASSERT_EQ(q.hessian.rows(), 1);
  EXPECT_NEAR(q.hessian(0, 0), 3.0 - 2.0 * 2.0 / 4.0, 1e-15);
  EXPECT_NEAR(q.gradient(0), 2.0 - 2.0 * 1.0 / 4.0, 1e-15);
}

TEST(Marginalization, PreservesMinimizerOfRandomSystems) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int dim = 6 + trial % 19;
    Eigen::MatrixXd m(dim, dim);
    for (int i = 0; i < dim * dim; ++i) m(i) = n(rng);
    const Eigen::MatrixXd h = m * m.transpose() + 0.5 * Eigen::MatrixXd::Identity(dim, dim);
    Eigen::VectorXd b(dim);
    for (int i = 0; i < dim; ++i) b(i) = n(rng);
    std::vector<int> remove;
    for (int i = 0; i < dim; ++i) {
      if (i % 3 == trial % 3) remove.push_back(i);
    }
    const Eigen::VectorXd full = h.ldlt().solve(-b);
    const auto q = schur_marginalize(h, b, remove);
    const Eigen::VectorXd reduced = q.hessian.ldlt().solve(-q.gradient);
    int j = 0;
    for (int i = 0; i < dim; ++i) {
      if (std::find(remove.begin(), remove.end(), i) != remove.end()) continue;
      EXPECT_NEAR(reduced(j++), full(i), 1e-8);
    }
  }
}

TEST(Marginalization, PriorStaysPsdOverSuccessiveSteps) {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int dim = 66;
    Eigen::MatrixXd m(dim, 30);
    for (int i = 0; i < m.size(); ++i) m(i) = n(rng);
    Eigen::MatrixXd h = m * m.transpose();  // rank-deficient PSD
    Eigen::VectorXd b = Eigen::VectorXd::Random(dim);
    for (int step = 0; step < 10; ++step) {
      std::vector<int> remove(6);
      for (int i = 0; i < 6; ++i) remove[i] = i;
      auto q = schur_marginalize(h, b, remove);
      clamp_to_psd(q.hessian);
      h = q.hessian;
      b = q.gradient;
      EXPECT_LT((h - h.transpose()).cwiseAbs().maxCoeff(), 1e-12);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h);
      EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-9 * std::max(1.0, eig.eigenvalues().maxCoeff()));
    }
    EXPECT_EQ(h.rows(), 6);
  }
}

TEST(Marginalization, ClampRemovesNegativeEigenvalues) {
  Eigen::MatrixXd m(2, 2);
  m << 1.0, 0.0, 0.0, -0.5;
  EXPECT_EQ(clamp_to_psd(m), 1);
  EXPECT_NEAR(m(1, 1), 0.0, 1e-15);
  EXPECT_NEAR(m(0, 0), 1.0, 1e-15);
}

TEST(Marginalization, UnconnectedVictimIsDropped) {
  SlidingWindow w = plane_window(3);
  marginalize_keyframe(w, 1);
  EXPECT_TRUE(w.prior.empty());
  ASSERT_EQ(w.keyframes.size(), 2u);
  EXPECT_EQ(w.index_of(1), -1);
}

TEST(Marginalization, ConnectedVictimBuildsPrior) {
  SlidingWindow w = plane_window(4);
  for (auto& kf : w.keyframes) kf.states.assign(kf.edges.size(), EdgeState::kActive);
  marginalize_keyframe(w, 0);
  ASSERT_EQ(w.keyframes.size(), 3u);
  ASSERT_EQ(w.prior.keyframe_ids, (std::vector<int>{1, 2, 3}));
  const auto& h = w.prior.hessian;
  ASSERT_EQ(h.rows(), 18);
  EXPECT_LT((h - h.transpose()).cwiseAbs().maxCoeff(), 1e-9);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h);
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-9 * eig.eigenvalues().maxCoeff());
  EXPECT_GT(eig.eigenvalues().maxCoeff(), 0.0);
  // The prior is at its minimum for a perfect window.
  EXPECT_LT(w.prior.gradient.norm(), 1e-9);
}
