#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "edgevo/geometry.hpp"
#include "support.hpp"

using namespace edgevo;

namespace {

const CameraIntrinsics kIntr{};

Pose random_pose(std::mt19937_64& rng, double trans, double rot) {
  return Pose::exp(test::random_twist(rng, trans, rot));
}

}  // namespace

TEST(Project, PrincipalPointAndOffset) {
  const auto a = project(Vec3(0, 0, 1), kIntr);
  ASSERT_TRUE(a);
  EXPECT_DOUBLE_EQ(a->x(), 319.5);
  EXPECT_DOUBLE_EQ(a->y(), 239.5);
  const auto b = project(Vec3(0.1, 0, 1), kIntr);
  ASSERT_TRUE(b);
  EXPECT_NEAR(b->x(), 372.0, 1e-12);
  EXPECT_NEAR(b->y(), 239.5, 1e-12);
}

TEST(Project, RejectsNonPositiveDepth) {
  EXPECT_FALSE(project(Vec3(0.3, -0.2, 0.0), kIntr));
  EXPECT_FALSE(project(Vec3(0.3, -0.2, -1.0), kIntr));
}

TEST(Backproject, Examples) {
  EXPECT_TRUE(backproject(Vec2(319.5, 239.5), 1.0, kIntr)->isApprox(Vec3(0, 0, 1)));
  EXPECT_TRUE(backproject(Vec2(319.5, 239.5), 0.5, kIntr)->isApprox(Vec3(0, 0, 2)));
  EXPECT_FALSE(backproject(Vec2(10, 10), 0.0, kIntr));
  EXPECT_FALSE(backproject(Vec2(10, 10), -1.0, kIntr));
}

TEST(Backproject, RoundTrip) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const Vec2 p(640 * u(rng), 480 * u(rng));
    const double rho = 0.05 + 5.0 * u(rng);
    const auto q = project(*backproject(p, rho, kIntr), kIntr);
    ASSERT_TRUE(q);
    EXPECT_LT((*q - p).norm(), 1e-9);
  }
}

TEST(Pose, ExpLogRoundTrip) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    Twist xi;
    for (int j = 0; j < 3; ++j) xi(j) = 2.0 * u(rng);
    Vec3 axis(u(rng), u(rng), u(rng));
    if (axis.norm() < 1e-3) continue;
    const double angle = (i < 10 ? 1e-7 * i : 3.1 * std::abs(u(rng)));
    xi.tail<3>() = angle * axis.normalized();
    const Pose t = Pose::exp(xi);
    EXPECT_LT((t.log() - xi).norm(), 1e-9) << "angle " << angle;
    const Pose back = Pose::exp(t.log());
    EXPECT_LT((back.matrix() - t.matrix()).norm(), 1e-9);
  }
}

TEST(Pose, ExpMatchesMatrixExponentialSeries) {
  // Independent oracle: truncated power series of the 4x4 generator.
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const Twist xi = test::random_twist(rng, 0.5, 0.5);
    Eigen::Matrix4d g = Eigen::Matrix4d::Zero();
    g.topLeftCorner<3, 3>() = skew(xi.tail<3>());
    g.topRightCorner<3, 1>() = xi.head<3>();
    Eigen::Matrix4d sum = Eigen::Matrix4d::Identity();
    Eigen::Matrix4d term = Eigen::Matrix4d::Identity();
    for (int k = 1; k < 40; ++k) {
      term = term * g / k;
      sum += term;
    }
    EXPECT_LT((Pose::exp(xi).matrix() - sum).norm(), 1e-12);
  }
}

TEST(Pose, InverseComposesToIdentity) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    const Pose t = random_pose(rng, 1.0, 1.0);
    EXPECT_LT(((t.inverse() * t).matrix() - Eigen::Matrix4d::Identity()).norm(), 1e-9);
  }
}

TEST(Pose, LongCompositionStaysOrthonormal) {
  std::mt19937_64 rng(5);
  Pose t;
  for (int i = 0; i < 10000; ++i) t = random_pose(rng, 0.01, 0.05) * t;
  const Mat3& r = t.rotation();
  EXPECT_LT((r.transpose() * r - Mat3::Identity()).norm(), 1e-9);
  EXPECT_NEAR(r.determinant(), 1.0, 1e-9);
}

TEST(Pose, RenormalizedIsNearestRotation) {
  Mat3 r = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  Mat3 noisy = r;
  noisy(0, 1) += 1e-6;
  noisy(2, 0) -= 2e-6;
  const Pose p = Pose(noisy, Vec3::Zero()).renormalized();
  EXPECT_LT((p.rotation().transpose() * p.rotation() - Mat3::Identity()).norm(), 1e-12);
  EXPECT_LT((p.rotation() - r).norm(), 1e-5);
}

TEST(Pose, QuaternionRoundTrip) {
  const Eigen::Quaterniond q(Eigen::AngleAxisd(1.2, Vec3(0, 1, 1).normalized()));
  const Pose p = Pose::from_quaternion(q, Vec3(1, 2, 3));
  EXPECT_NEAR(std::abs(p.quaternion().dot(q)), 1.0, 1e-12);
  EXPECT_NEAR(rotation_angle(p), 1.2, 1e-12);
}

TEST(Pose, IncrementIsLeftMultiplied) {
  std::mt19937_64 rng(6);
  const Twist d = test::random_twist(rng, 0.1, 0.1);
  const Pose t = random_pose(rng, 1.0, 0.5);
  const Eigen::Matrix4d expected = Pose::exp(d).matrix() * t.matrix();
  EXPECT_LT((apply_increment(d, t).matrix() - expected).norm(), 1e-12);
}

TEST(Warp, IdentityAndTranslation) {
  for (const Vec2 p : {Vec2(10, 20), Vec2(319.5, 239.5), Vec2(600, 470)}) {
    const auto w = warp(p, 0.7, Pose::identity(), kIntr);
    ASSERT_TRUE(w);
    EXPECT_LT((*w - p).norm(), 1e-12);
  }
  const auto w = warp(Vec2(319.5, 239.5), 1.0, Pose(Mat3::Identity(), Vec3(0.1, 0, 0)), kIntr);
  ASSERT_TRUE(w);
  EXPECT_NEAR(w->x(), 372.0, 1e-12);
  EXPECT_NEAR(w->y(), 239.5, 1e-12);
}

TEST(Warp, MatchesStepwiseComposition) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const Vec2 p(640 * u(rng), 480 * u(rng));
    const double rho = 0.2 + u(rng);
    const Pose t = random_pose(rng, 0.1, 0.1);
    // By hand, without the library's backproject/project.
    const double z = 1.0 / rho;
    const Vec3 x((p.x() - kIntr.cx) / kIntr.fx * z, (p.y() - kIntr.cy) / kIntr.fy * z, z);
    const Vec3 y = t.rotation() * x + t.translation();
    const auto w = warp_unbounded(p, rho, t, kIntr);
    if (y.z() <= 0.0) {
      EXPECT_FALSE(w);
      continue;
    }
    ASSERT_TRUE(w);
    const Vec2 expected(kIntr.fx * y.x() / y.z() + kIntr.cx, kIntr.fy * y.y() / y.z() + kIntr.cy);
    EXPECT_LT((*w - expected).norm(), 1e-9);
    const auto bounded = warp(p, rho, t, kIntr);
    EXPECT_EQ(bounded.has_value(), kIntr.contains(expected));
    ++checked;
  }
  EXPECT_GT(checked, 900);
}

TEST(Warp, OutOfViewRejected) {
  EXPECT_FALSE(warp(Vec2(600, 240), 1.0, Pose(Mat3::Identity(), Vec3(1.0, 0, 0)), kIntr));
  EXPECT_FALSE(warp(Vec2(320, 240), 1.0, Pose(Mat3::Identity(), Vec3(0, 0, -2.0)), kIntr));
}

TEST(WarpJacobian, PrincipalPointColumns) {
  const auto j = warp_jacobian(Vec2(319.5, 239.5), 1.0, Pose::identity(), kIntr);
  ASSERT_TRUE(j);
  EXPECT_NEAR((*j)(0, 0), kIntr.fx, 1e-12);
  EXPECT_NEAR((*j)(1, 0), 0.0, 1e-12);
  // Rotation about the optical axis leaves the principal point fixed.
  EXPECT_NEAR((*j)(0, 5), 0.0, 1e-12);
  EXPECT_NEAR((*j)(1, 5), 0.0, 1e-12);
}

TEST(WarpJacobian, MatchesCentralDifferences) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double h = 1e-6;
  double worst = 0.0;
  int configs = 0;
  while (configs < 1000) {
    const Vec2 p(100 + 440 * u(rng), 80 + 320 * u(rng));
    const double rho = 0.2 + u(rng);
    const Pose t = random_pose(rng, 0.05, 0.05);
    const auto j = warp_jacobian(p, rho, t, kIntr);
    if (!j) continue;
    Mat26 fd;
    bool ok = true;
    for (int k = 0; k < 6 && ok; ++k) {
      Twist d = Twist::Zero();
      d(k) = h;
      const auto plus = warp_unbounded(p, rho, apply_increment(d, t), kIntr);
      const auto minus = warp_unbounded(p, rho, apply_increment(-d, t), kIntr);
      ok = plus && minus;
      if (ok) fd.col(k) = (*plus - *minus) / (2 * h);
    }
    if (!ok) continue;
    worst = std::max(worst, (*j - fd).norm() / std::max(1.0, fd.norm()));
    ++configs;
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Intrinsics, LevelsAndValidity) {
  EXPECT_TRUE(kIntr.valid());
  const auto l1 = kIntr.at_level(1);
  EXPECT_EQ(l1.width, 320);
  EXPECT_EQ(l1.height, 240);
  EXPECT_DOUBLE_EQ(l1.fx, 262.5);
  // Level-1 pixel x covers level-0 pixels 2x and 2x+1.
  EXPECT_DOUBLE_EQ(l1.cx, (319.5 - 0.5) / 2.0);
  CameraIntrinsics bad = kIntr;
  bad.cx = 700;
  EXPECT_FALSE(bad.valid());
  bad = kIntr;
  bad.fx = 0;
  EXPECT_FALSE(bad.valid());
}
