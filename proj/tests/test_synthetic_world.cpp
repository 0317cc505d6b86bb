#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "edgevo/dataset_io.hpp"
#include "edgevo/image_pipeline.hpp"
#include "edgevo/synthetic_world.hpp"

using namespace edgevo;

namespace {

const CameraIntrinsics kIntr{};

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 d = b - a;
  const double t = std::clamp((p - a).dot(d) / d.squaredNorm(), 0.0, 1.0);
  return (p - (a + t * d)).norm();
}

// Depth where the viewing ray through `pixel` passes closest to the 3D line a-b.
double ray_line_depth(const Vec2& pixel, const Vec3& a, const Vec3& b) {
  const Vec3 r((pixel.x() - kIntr.cx) / kIntr.fx, (pixel.y() - kIntr.cy) / kIntr.fy, 1.0);
  const Vec3 d = b - a;
  // Minimize |s r - (a + u d)| over s, u.
  Eigen::Matrix2d m;
  m << r.dot(r), -r.dot(d), -r.dot(d), d.dot(d);
  const Eigen::Vector2d rhs(r.dot(a), -d.dot(a));
  const Eigen::Vector2d su = m.ldlt().solve(rhs);
  return (a + su(1) * d).z();
}

}  // namespace

TEST(RenderFrame, CubeHasTwelveSegments) {
  const auto scene = cube_scene(Vec3(0.0, 0.0, 2.5), 1.0);  // front face 2 m ahead
  const auto f = render_frame(scene, Pose::identity(), kIntr);
  ASSERT_TRUE(f);
  EXPECT_EQ(f->projected.size(), 12u);
  // Front face corners land at cx +/- fx * 0.5 / 2.
  double xmin = 1e9, xmax = -1e9;
  for (const auto& s : f->projected) {
    xmin = std::min({xmin, s.a.x(), s.b.x()});
    xmax = std::max({xmax, s.a.x(), s.b.x()});
  }
  EXPECT_NEAR(xmin, kIntr.cx - 131.25, 1e-9);
  EXPECT_NEAR(xmax, kIntr.cx + 131.25, 1e-9);
  EXPECT_FLOAT_EQ(f->depth(320, 240), 2.0f);
}

TEST(RenderFrame, CannyRecoversAnalyticEdges) {
  for (const auto& [scene, pose] :
       {std::pair{cube_scene(Vec3(0.0, 0.0, 2.5), 1.0), Pose::identity()},
        std::pair{cube_scene(Vec3(0.0, 0.0, 2.5), 1.0),
                  Pose::exp((Twist() << 0.3, -0.2, 0.0, 0.1, -0.15, 0.05).finished())}}) {
    const auto f = render_frame(scene, pose, kIntr);
    ASSERT_TRUE(f);
    const auto edges = canny_detect(f->gray, CannyThresholds{});
    std::size_t total = 0, hit = 0;
    for (int y = 0; y < f->edge_mask.height(); ++y) {
      for (int x = 0; x < f->edge_mask.width(); ++x) {
        if (!f->edge_mask(x, y)) continue;
        ++total;
        bool found = false;
        for (int dy = -1; dy <= 1 && !found; ++dy) {
          for (int dx = -1; dx <= 1 && !found; ++dx) {
            found = edges.mask.contains(x + dx, y + dy) && edges.mask(x + dx, y + dy);
          }
        }
        hit += found;
      }
    }
    ASSERT_GT(total, 500u);
    EXPECT_GE(static_cast<double>(hit) / total, 0.95) << hit << " / " << total;
  }
}

TEST(RenderFrame, AnalyticEdgesWarpConsistently) {
  const auto scene = cube_scene(Vec3(0.0, 0.0, 2.5), 1.0);
  const Pose pa = Pose::identity();
  const Pose pb = Pose::exp((Twist() << 0.1, 0.05, -0.1, 0.02, 0.08, -0.03).finished());
  const auto fa = render_frame(scene, pa, kIntr);
  const auto fb = render_frame(scene, pb, kIntr);
  ASSERT_TRUE(fa && fb);
  ASSERT_EQ(fa->projected.size(), 12u);
  ASSERT_EQ(fb->projected.size(), 12u);
  const Pose a_to_b = pb.inverse() * pa;
  double worst = 0.0;
  for (std::size_t i = 0; i < 12; ++i) {
    const auto& sa = fa->projected[i];
    const auto& sb = fb->projected[i];
    for (int k = 0; k <= 50; ++k) {
      const double t = k / 50.0;
      // Inverse depth is affine along a projected 3D line.
      const double rho = sa.inv_depth_a + t * (sa.inv_depth_b - sa.inv_depth_a);
      const auto q = warp_unbounded(sa.a + t * (sa.b - sa.a), rho, a_to_b, kIntr);
      ASSERT_TRUE(q);
      worst = std::max(worst, point_segment_distance(*q, sb.a, sb.b));
    }
  }
  EXPECT_LT(worst, 0.5);
}

TEST(RenderFrame, EdgeDepthMatchesGeometry) {
  const auto scene = cube_scene(Vec3(0.0, 0.0, 2.5), 1.0);
  const Pose pose = Pose::exp((Twist() << 0.3, -0.2, 0.0, 0.1, -0.15, 0.05).finished());
  const auto f = render_frame(scene, pose, kIntr);
  ASSERT_TRUE(f);
  const Pose to_cam = pose.inverse();
  double worst = 0.0;
  std::size_t checked = 0;
  for (int y = 0; y < f->edge_mask.height(); ++y) {
    for (int x = 0; x < f->edge_mask.width(); ++x) {
      if (!f->edge_mask(x, y)) continue;
      // The rendered value must be the depth of one of the segments passing
      // within half a pixel.
      double best = 1e9;
      for (const auto& seg : scene.segments) {
        const Vec3 a = to_cam * seg.a;
        const Vec3 b = to_cam * seg.b;
        const Vec2 pa = *project(a, kIntr);
        const Vec2 pb = *project(b, kIntr);
        const Vec2 p(x, y);
        if (point_segment_distance(p, pa, pb) > 0.5 + 1e-9) continue;
        const Vec2 d = pb - pa;
        const Vec2 foot = pa + std::clamp((p - pa).dot(d) / d.squaredNorm(), 0.0, 1.0) * d;
        best = std::min(best, std::abs(ray_line_depth(foot, a, b) - f->depth(x, y)));
      }
      worst = std::max(worst, best);
      ++checked;
    }
  }
  ASSERT_GT(checked, 500u);
  EXPECT_LT(worst, 1e-3);
}

TEST(RenderFrame, NothingInView) {
  EXPECT_FALSE(render_frame(SyntheticScene{}, Pose::identity(), kIntr));
  const auto behind = cube_scene(Vec3(0.0, 0.0, -3.0), 1.0);
  EXPECT_FALSE(render_frame(behind, Pose::identity(), kIntr));
}

TEST(Scenes, DeterministicPerSeed) {
  const auto a = named_scene("compact", 9);
  const auto b = named_scene("compact", 9);
  const auto c = named_scene("compact", 10);
  ASSERT_EQ(a.segments.size(), b.segments.size());
  for (std::size_t i = 0; i < a.segments.size(); ++i) EXPECT_EQ(a.segments[i].a, b.segments[i].a);
  EXPECT_NE(a.segments[0].a, c.segments[0].a);
  EXPECT_THROW(named_scene("nope", 1), std::invalid_argument);
}

TEST(Scenes, InFrontOfOrbitCameras) {
  const auto seq = make_sequence(TrajectoryKind::kOrbit, 200, 4);
  for (const auto& pose : seq.poses) {
    const Pose to_cam = pose.inverse();
    for (const auto& face : seq.scene.faces) {
      for (const auto& c : face.corners) EXPECT_GE((to_cam * c).z(), 0.3);
    }
  }
}

TEST(Trajectory, Static) {
  const auto t = generate_trajectory(TrajectoryKind::kStatic, 10, 0.5);
  ASSERT_EQ(t.size(), 10u);
  for (const auto& p : t) EXPECT_EQ(p.matrix(), Pose::identity().matrix());
}

TEST(Trajectory, LineSteps) {
  const auto t = generate_trajectory(TrajectoryKind::kLine, 50, 0.01);
  for (std::size_t k = 1; k < t.size(); ++k) {
    const Pose rel = t[k - 1].inverse() * t[k];
    EXPECT_NEAR(rel.translation().norm(), 0.01, 1e-12);
    EXPECT_NEAR(rotation_angle(rel), 0.0, 1e-12);
  }
}

TEST(Trajectory, OrbitCloses) {
  const auto t = generate_trajectory(TrajectoryKind::kOrbit, 201, 2.0 * std::numbers::pi / 200.0);
  EXPECT_LT((t.front().matrix() - t.back().matrix()).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(t.front().matrix(), Pose::identity().matrix());
  // Every camera looks at the orbit centre from 2 m.
  for (const auto& p : t) {
    const Vec3 c = p.inverse() * Vec3(0.0, 0.0, 2.0);
    EXPECT_NEAR(c.x(), 0.0, 1e-9);
    EXPECT_NEAR(c.y(), 0.0, 1e-9);
    EXPECT_NEAR(c.z(), 2.0, 1e-9);
  }
}

TEST(Trajectory, DefaultFlowWithinTwentyPixels) {
  for (auto kind : {TrajectoryKind::kLine, TrajectoryKind::kOrbit}) {
    const auto seq = make_sequence(kind, 40, 5);
    double worst = 0.0;
    for (std::size_t k = 1; k < seq.poses.size(); ++k) {
      const Pose a = seq.poses[k - 1].inverse();
      const Pose b = seq.poses[k].inverse();
      for (const auto& s : seq.scene.segments) {
        for (const Vec3& w : {s.a, s.b}) {
          const auto pa = project(a * w, kIntr);
          const auto pb = project(b * w, kIntr);
          if (pa && pb) worst = std::max(worst, (*pa - *pb).norm());
        }
      }
    }
    EXPECT_LE(worst, 20.0) << to_string(kind);
  }
}

TEST(TrajectoryKindNames, RoundTrip) {
  for (auto k : {TrajectoryKind::kStatic, TrajectoryKind::kLine, TrajectoryKind::kOrbit}) {
    EXPECT_EQ(parse_trajectory_kind(to_string(k)), k);
  }
  EXPECT_FALSE(parse_trajectory_kind("spiral"));
}

TEST(WriteTumSequence, ReadsBackCleanly) {
  const auto root = std::filesystem::temp_directory_path() / "edgevo_synth_seq";
  std::filesystem::remove_all(root);
  const auto seq = make_sequence(TrajectoryKind::kLine, 4, 6);
  write_tum_sequence(seq, kIntr, root);
  SequenceReader reader(root);
  EXPECT_EQ(reader.size(), 4u);
  EXPECT_EQ(reader.dropped_rgb() + reader.dropped_depth(), 0u);
  const auto expected = render_frame(seq.scene, seq.poses[2], kIntr);
  const auto frame = reader.at(2);
  ASSERT_TRUE(frame);
  EXPECT_EQ(frame->gray, expected->gray);
  // Depth survives the 1/5000 m quantization.
  for (int y = 0; y < frame->depth.height(); y += 7) {
    for (int x = 0; x < frame->depth.width(); x += 7) {
      EXPECT_NEAR(frame->depth(x, y), expected->depth(x, y), 1.0 / kTumDepthScale);
    }
  }
  EXPECT_TRUE(reader.warnings().empty());
  const auto gt = load_trajectory(root / "groundtruth.txt");
  ASSERT_EQ(gt.size(), 4u);
  EXPECT_NEAR(gt[3].translation.x(), 0.03, 1e-9);
  std::filesystem::remove_all(root);
}
