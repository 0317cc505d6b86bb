#include "edgevo/geometry.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

namespace edgevo {

namespace {

// Coefficients of the SO(3)/SE(3) series, switched to Taylor expansions near 0.
struct ExpCoefficients {
  double a;  // sin(t)/t
  double b;  // (1 - cos(t))/t^2
  double c;  // (t - sin(t))/t^3
};

ExpCoefficients exp_coefficients(double theta) {
  const double t2 = theta * theta;
  if (theta < 1e-5) {
    return {1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0};
  }
  return {std::sin(theta) / theta, (1.0 - std::cos(theta)) / t2, (theta - std::sin(theta)) / (t2 * theta)};
}

Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

}  // namespace

Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<  0.0,  -v.z(),  v.y(),
        v.z(),  0.0,  -v.x(),
       -v.y(),  v.x(),  0.0;
  // clang-format on
  return s;
}

Pose::Pose(const Mat3& rotation, const Vec3& translation) : rotation_(rotation), translation_(translation) {}

Pose Pose::exp(const Twist& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 omega = xi.tail<3>();
  const double theta = omega.norm();
  const Mat3 w = skew(omega);
  const Mat3 w2 = w * w;
  const auto k = exp_coefficients(theta);
  const Mat3 r = Mat3::Identity() + k.a * w + k.b * w2;
  const Mat3 v = Mat3::Identity() + k.b * w + k.c * w2;
  return {r, v * rho};
}

Pose Pose::from_quaternion(const Eigen::Quaterniond& q, const Vec3& t) {
  return {q.normalized().toRotationMatrix(), t};
}

Twist Pose::log() const {
  const Eigen::AngleAxisd aa(rotation_);
  const double theta = aa.angle();
  const Vec3 omega = aa.axis() * theta;
  const Mat3 w = skew(omega);
  Mat3 v_inv;
  if (theta < 1e-5) {
    v_inv = Mat3::Identity() - 0.5 * w + (1.0 / 12.0) * w * w;
  } else {
    const double half = 0.5 * theta;
    const double coef = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
    v_inv = Mat3::Identity() - 0.5 * w + coef * w * w;
  }
  Twist xi;
  xi.head<3>() = v_inv * translation_;
  xi.tail<3>() = omega;
  return xi;
}

Eigen::Quaterniond Pose::quaternion() const { return Eigen::Quaterniond(rotation_).normalized(); }

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

Pose Pose::inverse() const {
  Pose inv(rotation_.transpose(), -(rotation_.transpose() * translation_));
  inv.compositions_ = compositions_;
  return inv;
}

Pose Pose::operator*(const Pose& other) const {
  Pose out(rotation_ * other.rotation_, rotation_ * other.translation_ + translation_);
  out.compositions_ = std::max(compositions_, other.compositions_) + 1;
  if (out.compositions_ >= kRenormalizeInterval) out = out.renormalized();
  return out;
}

Pose Pose::renormalized() const { return {nearest_rotation(rotation_), translation_}; }

double rotation_angle(const Pose& pose) {
  const double c = std::clamp(0.5 * (pose.rotation().trace() - 1.0), -1.0, 1.0);
  return std::acos(c);
}

bool CameraIntrinsics::valid() const {
  return fx > 0.0 && fy > 0.0 && width > 0 && height > 0 && cx > 0.0 && cx < width && cy > 0.0 &&
         cy < height;
}

CameraIntrinsics CameraIntrinsics::at_level(int level) const {
  const double s = std::ldexp(1.0, -level);
  CameraIntrinsics out;
  out.fx = fx * s;
  out.fy = fy * s;
  out.cx = (cx + 0.5) * s - 0.5;
  out.cy = (cy + 0.5) * s - 0.5;
  out.width = (width + (1 << level) - 1) >> level;
  out.height = (height + (1 << level) - 1) >> level;
  return out;
}

bool CameraIntrinsics::contains(const Vec2& pixel, double margin) const {
  return pixel.x() >= margin && pixel.y() >= margin && pixel.x() <= width - 1 - margin &&
         pixel.y() <= height - 1 - margin;
}

std::optional<Vec2> project(const Vec3& point, const CameraIntrinsics& intr) {
  if (!(point.z() > 0.0)) return std::nullopt;
  const double iz = 1.0 / point.z();
  return Vec2(intr.fx * point.x() * iz + intr.cx, intr.fy * point.y() * iz + intr.cy);
}

std::optional<Vec3> backproject(const Vec2& pixel, double inv_depth, const CameraIntrinsics& intr) {
  if (!(inv_depth > 0.0)) return std::nullopt;
  const double z = 1.0 / inv_depth;
  return Vec3((pixel.x() - intr.cx) / intr.fx * z, (pixel.y() - intr.cy) / intr.fy * z, z);
}

Mat23 projection_jacobian(const Vec3& point, const CameraIntrinsics& intr) {
  const double iz = 1.0 / point.z();
  const double iz2 = iz * iz;
  Mat23 j;
  j << intr.fx * iz, 0.0, -intr.fx * point.x() * iz2,  //
      0.0, intr.fy * iz, -intr.fy * point.y() * iz2;
  return j;
}

Mat36 point_left_jacobian(const Vec3& transformed) {
  Mat36 j;
  j.leftCols<3>().setIdentity();
  j.rightCols<3>() = -skew(transformed);
  return j;
}

std::optional<Vec2> warp_unbounded(const Vec2& pixel, double inv_depth, const Pose& pose,
                                   const CameraIntrinsics& intr) {
  const auto point = backproject(pixel, inv_depth, intr);
  if (!point) return std::nullopt;
  return project(pose * *point, intr);
}

std::optional<Vec2> warp(const Vec2& pixel, double inv_depth, const Pose& pose, const CameraIntrinsics& intr) {
  auto out = warp_unbounded(pixel, inv_depth, pose, intr);
  if (!out || !intr.contains(*out)) return std::nullopt;
  return out;
}

std::optional<Mat26> warp_jacobian(const Vec2& pixel, double inv_depth, const Pose& pose,
                                   const CameraIntrinsics& intr) {
  const auto point = backproject(pixel, inv_depth, intr);
  if (!point) return std::nullopt;
  const Vec3 transformed = pose * *point;
  if (!(transformed.z() > 0.0)) return std::nullopt;
  const auto projected = project(transformed, intr);
  if (!projected || !intr.contains(*projected)) return std::nullopt;
  return projection_jacobian(transformed, intr) * point_left_jacobian(transformed);
}

}  // namespace edgevo
