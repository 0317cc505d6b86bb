#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <optional>

namespace edgevo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat26 = Eigen::Matrix<double, 2, 6>;
using Mat36 = Eigen::Matrix<double, 3, 6>;
using Row6 = Eigen::Matrix<double, 1, 6>;

/// Element of se(3), ordered (translation, rotation).
using Twist = Vec6;

Mat3 skew(const Vec3& v);

/// Rigid-body transform x -> R x + t.
///
/// Poses are values. Composition counts how many products a rotation has
/// been through and re-projects it onto SO(3) every kRenormalizeInterval
/// compositions so long chains do not drift off the manifold.
class Pose {
 public:
  static constexpr int kRenormalizeInterval = 100;

  Pose() = default;
  Pose(const Mat3& rotation, const Vec3& translation);

  static Pose identity() { return {}; }
  static Pose exp(const Twist& xi);
  static Pose from_quaternion(const Eigen::Quaterniond& q, const Vec3& t);

  /// Inverse of exp for rotation angles below pi.
  Twist log() const;

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  Eigen::Quaterniond quaternion() const;
  Eigen::Matrix4d matrix() const;
  int compositions() const { return compositions_; }

  Pose inverse() const;
  Pose operator*(const Pose& other) const;
  Vec3 operator*(const Vec3& point) const { return rotation_ * point + translation_; }

  /// Nearest rotation matrix in the Frobenius sense.
  Pose renormalized() const;

 private:
  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
  int compositions_ = 0;
};

/// Left-multiplicative update T <- exp(delta) * T.
inline Pose apply_increment(const Twist& delta, const Pose& pose) { return Pose::exp(delta) * pose; }

/// Rotation angle of a pose in radians.
double rotation_angle(const Pose& pose);

struct CameraIntrinsics {
  double fx = 525.0;
  double fy = 525.0;
  double cx = 319.5;
  double cy = 239.5;
  int width = 640;
  int height = 480;

  bool valid() const;

  /// Intrinsics of pyramid level `level`, where each level halves the
  /// resolution and pixel (x, y) covers level-0 pixels 2x..2x+1.
  CameraIntrinsics at_level(int level) const;

  bool contains(const Vec2& pixel, double margin = 0.0) const;
};

/// Pinhole projection; nullopt for points with z <= 0.
std::optional<Vec2> project(const Vec3& point, const CameraIntrinsics& intr);

/// Inverse projection at inverse depth rho; nullopt for rho <= 0.
std::optional<Vec3> backproject(const Vec2& pixel, double inv_depth, const CameraIntrinsics& intr);

/// d(project)/d(point), evaluated at a point with positive depth.
Mat23 projection_jacobian(const Vec3& point, const CameraIntrinsics& intr);

/// d(exp(delta) * p)/d(delta) at delta = 0 for an already transformed point p.
Mat36 point_left_jacobian(const Vec3& transformed);

/// Re-projects a reference pixel with inverse depth into the target camera.
/// nullopt when the point lands behind the camera or outside the image.
std::optional<Vec2> warp(const Vec2& pixel, double inv_depth, const Pose& pose,
                         const CameraIntrinsics& intr);

/// Same as warp() but without the image-bounds test.
std::optional<Vec2> warp_unbounded(const Vec2& pixel, double inv_depth, const Pose& pose,
                                   const CameraIntrinsics& intr);

/// Jacobian of warp() w.r.t. a left twist increment applied to `pose`.
std::optional<Mat26> warp_jacobian(const Vec2& pixel, double inv_depth, const Pose& pose,
                                   const CameraIntrinsics& intr);

}  // namespace edgevo
