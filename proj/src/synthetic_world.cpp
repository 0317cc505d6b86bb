#include "edgevo/synthetic_world.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "edgevo/dataset_io.hpp"

namespace edgevo {

namespace fs = std::filesystem;

namespace {

// Face shade by box axis; neighbouring faces differ by at least 45 levels.
constexpr std::array<double, 3> kAxisShade{240.0, 165.0, 90.0};

}  // namespace

void add_box(SyntheticScene& scene, const Vec3& center, const Mat3& axes, const Vec3& size, double shade_offset) {
  const Vec3 h = 0.5 * size;
  auto corner = [&](int i) -> Vec3 {
    const Vec3 local((i & 1) ? h.x() : -h.x(), (i & 2) ? h.y() : -h.y(), (i & 4) ? h.z() : -h.z());
    return center + axes * local;
  };
  for (int i = 0; i < 8; ++i) {
    for (int bit : {1, 2, 4}) {
      if ((i & bit) == 0) scene.segments.push_back({corner(i), corner(i | bit)});
    }
  }
  // Faces: for each axis, the two corner sets with that bit clear / set.
  for (int axis = 0; axis < 3; ++axis) {
    const int bit = 1 << axis;
    const int u = 1 << ((axis + 1) % 3);
    const int v = 1 << ((axis + 2) % 3);
    for (int side : {0, bit}) {
      Face f;
      f.corners = {corner(side), corner(side | u), corner(side | u | v), corner(side | v)};
      f.shade = kAxisShade[axis] + shade_offset;
      f.outward = (side ? 1.0 : -1.0) * axes.col(axis);
      scene.faces.push_back(f);
    }
  }
}

void add_box(SyntheticScene& scene, const Vec3& center, const Vec3& size) {
  add_box(scene, center, Mat3::Identity(), size, 0.0);
}

void add_bar(SyntheticScene& scene, const Vec3& a, const Vec3& b, double thickness, double shade_offset) {
  const Vec3 d = b - a;
  const double len = d.norm();
  if (!(len > 0.0)) return;
  const Vec3 x = d / len;
  int least = 0;
  x.cwiseAbs().minCoeff(&least);
  const Vec3 y = x.cross(Vec3::Unit(least)).normalized();
  Mat3 axes;
  axes << x, y, x.cross(y);
  add_box(scene, 0.5 * (a + b), axes, Vec3(len, thickness, thickness), shade_offset);
}

SyntheticScene cube_scene(const Vec3& center, double side) {
  SyntheticScene s;
  add_box(s, center, Vec3::Constant(side));
  return s;
}

SyntheticScene random_scene(std::uint64_t seed, const Vec3& lo, const Vec3& hi, int boxes, int bars) {
  SyntheticScene s;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto point = [&] {
    return Vec3(lo.x() + unit(rng) * (hi.x() - lo.x()), lo.y() + unit(rng) * (hi.y() - lo.y()),
                lo.z() + unit(rng) * (hi.z() - lo.z()));
  };
  auto offset = [&] { return 30.0 * unit(rng) - 15.0; };
  const Vec3 extent = hi - lo;
  for (int i = 0; i < boxes; ++i) {
    const Vec3 size = (0.05 + 0.15 * Vec3(unit(rng), unit(rng), unit(rng)).array()).matrix().cwiseProduct(extent);
    const Vec3 c = point().cwiseMax(lo + 0.5 * size).cwiseMin(hi - 0.5 * size);
    add_box(s, c, Mat3::Identity(), size, offset());
  }
  for (int i = 0; i < bars; ++i) {
    const Vec3 a = point();
    const Vec3 b = point();
    add_bar(s, a, b, kBarThickness, offset());
  }
  return s;
}

namespace {

// Points uniformly inside a ball, so every bar between them stays inside.
SyntheticScene ball_scene(std::uint64_t seed, const Vec3& center, double radius, int boxes, int bars) {
  SyntheticScene s;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  auto in_ball = [&](double r) -> Vec3 {
    Vec3 v;
    do {
      v = Vec3(unit(rng), unit(rng), unit(rng));
    } while (v.squaredNorm() > 1.0);
    return center + r * v;
  };
  for (int i = 0; i < boxes; ++i) {
    const double side = 0.1 + 0.08 * (unit(rng) + 1.0);  // <= 0.26
    const Vec3 c = in_ball(radius - 0.5 * std::sqrt(3.0) * side);
    add_box(s, c, Mat3::Identity(), Vec3::Constant(side), 15.0 * unit(rng));
  }
  for (int i = 0; i < bars; ++i) {
    const Vec3 a = in_ball(radius);
    const Vec3 b = in_ball(radius);
    add_bar(s, a, b, kBarThickness, 15.0 * unit(rng));
  }
  return s;
}

}  // namespace

SyntheticScene named_scene(const std::string& name, std::uint64_t seed) {
  if (name == "compact") return ball_scene(seed, Vec3(0.0, 0.0, 2.0), 0.5, 8, 40);
  if (name == "wide") return random_scene(seed, Vec3(-1.5, -1.0, 2.0), Vec3(3.5, 1.0, 4.0), 24, 80);
  if (name == "rich") return random_scene(seed, Vec3(-1.6, -1.2, 2.0), Vec3(1.6, 1.2, 4.0), 60, 260);
  if (name == "cube") return cube_scene(Vec3(0.0, 0.0, 2.5), 1.0);
  throw std::invalid_argument("unknown scene '" + name + "'");
}

namespace {

constexpr double kNear = 0.1;
constexpr int kSubsamples = 3;  // per axis, odd so one sample sits on the pixel centre
constexpr double kDepthHalfWidth = 2.0;

// Clips the parametric range [t0, t1] of a + t (b - a) to the box.
bool clip_2d(const Vec2& a, const Vec2& b, double xmin, double ymin, double xmax, double ymax, double& t0,
             double& t1) {
  const Vec2 d = b - a;
  const double p[4] = {-d.x(), d.x(), -d.y(), d.y()};
  const double q[4] = {a.x() - xmin, xmax - a.x(), a.y() - ymin, ymax - a.y()};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0.0) {
      t0 = std::max(t0, r);
    } else {
      t1 = std::min(t1, r);
    }
    if (t0 > t1) return false;
  }
  return true;
}

// Sutherland-Hodgman against the plane z = kNear.
std::vector<Vec3> clip_near(const std::array<Vec3, 4>& poly) {
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec3& p = poly[i];
    const Vec3& q = poly[(i + 1) % poly.size()];
    const bool pin = p.z() >= kNear;
    const bool qin = q.z() >= kNear;
    if (pin) out.push_back(p);
    if (pin != qin) out.push_back(p + (kNear - p.z()) / (q.z() - p.z()) * (q - p));
  }
  return out;
}

// Z-buffered, supersampled fill of one planar convex face.
void fill_face(const std::vector<Vec3>& poly, double shade, const CameraIntrinsics& intr, Image<float>& sub_z,
               Image<float>& sub_shade) {
  const Vec3 n = (poly[1] - poly[0]).cross(poly[2] - poly[0]);
  const double plane = n.dot(poly[0]);
  if (std::abs(plane) < 1e-12) return;  // seen edge-on
  std::vector<Vec2> px;
  for (const auto& p : poly) px.push_back(*project(p, intr));
  double area = 0.0;
  for (std::size_t i = 0; i < px.size(); ++i) {
    const Vec2& a = px[i];
    const Vec2& b = px[(i + 1) % px.size()];
    area += a.x() * b.y() - a.y() * b.x();
  }
  if (area == 0.0) return;
  const double orient = area > 0.0 ? 1.0 : -1.0;

  const double s = kSubsamples;
  const double off = (kSubsamples - 1) / 2.0;
  double xmin = px[0].x(), xmax = xmin, ymin = px[0].y(), ymax = ymin;
  for (const auto& p : px) {
    xmin = std::min(xmin, p.x());
    xmax = std::max(xmax, p.x());
    ymin = std::min(ymin, p.y());
    ymax = std::max(ymax, p.y());
  }
  // Sub-sample (i, j) sits at pixel coordinate (i - off) / s.
  const int i0 = std::max(0, static_cast<int>(std::floor(xmin * s + off)));
  const int i1 = std::min(sub_z.width() - 1, static_cast<int>(std::ceil(xmax * s + off)));
  const int j0 = std::max(0, static_cast<int>(std::floor(ymin * s + off)));
  const int j1 = std::min(sub_z.height() - 1, static_cast<int>(std::ceil(ymax * s + off)));
  for (int j = j0; j <= j1; ++j) {
    const double v = (j - off) / s;
    // Span of the row inside every edge half-plane; the exact test below
    // still decides each sample, the span only bounds the loop.
    double lo = xmin;
    double hi = xmax;
    for (std::size_t k = 0; k < px.size(); ++k) {
      const Vec2& a = px[k];
      const Vec2& b = px[(k + 1) % px.size()];
      const double coef = -orient * (b.y() - a.y());
      const double rest = orient * ((b.x() - a.x()) * (v - a.y()) + (b.y() - a.y()) * a.x());
      if (coef > 0.0) {
        lo = std::max(lo, -rest / coef);
      } else if (coef < 0.0) {
        hi = std::min(hi, -rest / coef);
      } else if (rest < 0.0) {
        hi = lo - 1.0;
      }
    }
    if (hi < lo) continue;
    const int ia = std::max(i0, static_cast<int>(std::floor(lo * s + off)) - 1);
    const int ib = std::min(i1, static_cast<int>(std::ceil(hi * s + off)) + 1);
    for (int i = ia; i <= ib; ++i) {
      const double u = (i - off) / s;
      bool inside = true;
      for (std::size_t k = 0; k < px.size() && inside; ++k) {
        const Vec2& a = px[k];
        const Vec2& b = px[(k + 1) % px.size()];
        inside = orient * ((b.x() - a.x()) * (v - a.y()) - (b.y() - a.y()) * (u - a.x())) >= 0.0;
      }
      if (!inside) continue;
      const Vec3 ray((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
      const double denom = n.dot(ray);
      if (denom == 0.0) continue;
      const double z = plane / denom;
      if (!(z >= kNear)) continue;
      float& zb = sub_z(i, j);
      if (zb == 0.0f || z < zb) {
        zb = static_cast<float>(z);
        sub_shade(i, j) = static_cast<float>(shade);
      }
    }
  }
}

}  // namespace

std::optional<RenderedFrame> render_frame(const SyntheticScene& scene, const Pose& pose,
                                          const CameraIntrinsics& intr) {
  const int w = intr.width;
  const int h = intr.height;
  RenderedFrame f;
  f.gray = GrayImage(w, h, 0);
  f.depth = DepthImage(w, h, 0.0f);
  f.edge_mask = Image<std::uint8_t>(w, h, 0);
  f.edge_depth = DepthImage(w, h, 0.0f);
  const Pose world_to_camera = pose.inverse();

  Image<float> sub_z(w * kSubsamples, h * kSubsamples, 0.0f);
  Image<float> sub_shade(w * kSubsamples, h * kSubsamples, static_cast<float>(scene.background));
  const Vec3 eye = pose.translation();
  for (const auto& face : scene.faces) {
    // A back face of a closed solid is always hidden behind its front faces.
    if (face.outward.dot(face.corners[0] - eye) >= 0.0 && !face.outward.isZero()) continue;
    std::array<Vec3, 4> c;
    for (int i = 0; i < 4; ++i) c[i] = world_to_camera * face.corners[i];
    const auto poly = clip_near(c);
    if (poly.size() >= 3) fill_face(poly, face.shade, intr, sub_z, sub_shade);
  }
  const int centre = kSubsamples / 2;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sum = 0.0;
      for (int j = 0; j < kSubsamples; ++j) {
        for (int i = 0; i < kSubsamples; ++i) sum += sub_shade(x * kSubsamples + i, y * kSubsamples + j);
      }
      const double mean = sum / (kSubsamples * kSubsamples);
      f.gray(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(mean), 0L, 255L));
      f.depth(x, y) = sub_z(x * kSubsamples + centre, y * kSubsamples + centre);
    }
  }

  // Visible segment pixels become the analytic edge mask; background pixels
  // next to them borrow the segment depth so silhouette edges keep a depth.
  DepthImage halo(w, h, 0.0f);
  for (const auto& seg : scene.segments) {
    Vec3 a = world_to_camera * seg.a;
    Vec3 b = world_to_camera * seg.b;
    if (a.z() < kNear && b.z() < kNear) continue;
    if (a.z() < kNear || b.z() < kNear) {
      const double t = (kNear - a.z()) / (b.z() - a.z());
      const Vec3 c = a + t * (b - a);
      (a.z() < kNear ? a : b) = c;
    }
    Segment2 s;
    s.a = *project(a, intr);
    s.b = *project(b, intr);
    s.inv_depth_a = 1.0 / a.z();
    s.inv_depth_b = 1.0 / b.z();
    double t0 = 0.0;
    double t1 = 1.0;
    const double m = kDepthHalfWidth + 1.0;
    if (!clip_2d(s.a, s.b, -m, -m, w - 1 + m, h - 1 + m, t0, t1)) continue;
    double v0 = 0.0;
    double v1 = 1.0;
    if (clip_2d(s.a, s.b, 0.0, 0.0, w - 1.0, h - 1.0, v0, v1)) f.projected.push_back(s);

    const Vec2 d = s.b - s.a;
    const double len2 = d.squaredNorm();
    const double len = std::sqrt(len2);
    const int samples = static_cast<int>(std::ceil(len * (t1 - t0) / 0.5)) + 1;
    const int r = static_cast<int>(std::ceil(kDepthHalfWidth));
    for (int i = 0; i < samples; ++i) {
      const double t = samples == 1 ? t0 : t0 + (t1 - t0) * i / (samples - 1);
      const Vec2 c = s.a + t * d;
      const int cx = static_cast<int>(std::lround(c.x()));
      const int cy = static_cast<int>(std::lround(c.y()));
      for (int y = cy - r; y <= cy + r; ++y) {
        for (int x = cx - r; x <= cx + r; ++x) {
          if (!f.gray.contains(x, y)) continue;
          const Vec2 p(x, y);
          const double u = len2 > 0.0 ? std::clamp((p - s.a).dot(d) / len2, 0.0, 1.0) : 0.0;
          const double dist = (p - (s.a + u * d)).norm();
          if (dist > kDepthHalfWidth) continue;
          const double z = 1.0 / (s.inv_depth_a + u * (s.inv_depth_b - s.inv_depth_a));
          const double surface = f.depth(x, y);
          if (surface > 0.0 && surface < z - (0.01 + 0.01 * z)) continue;  // occluded
          const auto zf = static_cast<float>(z);
          if (surface == 0.0) {
            float& zh = halo(x, y);
            if (zh == 0.0f || zf < zh) zh = zf;
          }
          if (dist <= 0.5) {
            f.edge_mask(x, y) = 1;
            float& ze = f.edge_depth(x, y);
            if (ze == 0.0f || zf < ze) ze = zf;
          }
        }
      }
    }
  }
  if (f.projected.empty()) return std::nullopt;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (f.edge_mask(x, y)) {
        f.depth(x, y) = f.edge_depth(x, y);
      } else if (f.depth(x, y) == 0.0f) {
        f.depth(x, y) = halo(x, y);
      }
    }
  }
  return f;
}

std::optional<TrajectoryKind> parse_trajectory_kind(const std::string& name) {
  if (name == "static") return TrajectoryKind::kStatic;
  if (name == "line") return TrajectoryKind::kLine;
  if (name == "orbit") return TrajectoryKind::kOrbit;
  return std::nullopt;
}

const char* to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::kStatic:
      return "static";
    case TrajectoryKind::kLine:
      return "line";
    case TrajectoryKind::kOrbit:
      return "orbit";
  }
  return "?";
}

std::vector<Pose> generate_trajectory(TrajectoryKind kind, int length, double step, const TrajectoryParams& params) {
  std::vector<Pose> out;
  out.reserve(static_cast<std::size_t>(std::max(length, 0)));
  for (int k = 0; k < length; ++k) {
    switch (kind) {
      case TrajectoryKind::kStatic:
        out.push_back(Pose::identity());
        break;
      case TrajectoryKind::kLine:
        out.emplace_back(Mat3::Identity(), (k * step) * params.line_direction.normalized());
        break;
      case TrajectoryKind::kOrbit: {
        const double theta = k * step;
        const Mat3 r = Eigen::AngleAxisd(theta, Vec3::UnitY()).toRotationMatrix();
        // Camera on a circle about the y axis through the center, facing it;
        // k = 0 is the identity pose.
        const Vec3 offset = params.orbit_center - Vec3(0.0, 0.0, params.orbit_radius);
        const Vec3 t = params.orbit_center + r * (offset - params.orbit_center);
        out.emplace_back(r, t);
        break;
      }
    }
  }
  return out;
}

SyntheticSequence make_sequence(TrajectoryKind kind, int frames, std::uint64_t seed, const std::string& scene_name) {
  SyntheticSequence s;
  std::string name = scene_name;
  double step = 0.0;
  switch (kind) {
    case TrajectoryKind::kStatic:
      if (name.empty()) name = "compact";
      break;
    case TrajectoryKind::kLine:
      if (name.empty()) name = "wide";
      step = 0.01;
      break;
    case TrajectoryKind::kOrbit:
      if (name.empty()) name = "compact";
      step = 2.0 * std::numbers::pi / 200.0;
      break;
  }
  s.scene = named_scene(name, seed);
  s.poses = generate_trajectory(kind, frames, step);
  for (int k = 0; k < frames; ++k) s.timestamps.push_back(1.0 + k / 30.0);
  return s;
}

void write_tum_sequence(const SyntheticSequence& sequence, const CameraIntrinsics& intr, const fs::path& root) {
  fs::create_directories(root / "rgb");
  fs::create_directories(root / "depth");
  std::ofstream rgb_index(root / "rgb.txt");
  std::ofstream depth_index(root / "depth.txt");
  std::ofstream gt(root / "groundtruth.txt");
  if (!rgb_index || !depth_index || !gt) throw DatasetError("cannot write index files in " + root.string());
  rgb_index << "# color images\n# timestamp filename\n";
  depth_index << "# depth maps\n# timestamp filename\n";
  gt << "# ground truth trajectory\n# timestamp tx ty tz qx qy qz qw\n";
  for (std::size_t k = 0; k < sequence.poses.size(); ++k) {
    const auto frame = render_frame(sequence.scene, sequence.poses[k], intr);
    if (!frame) throw DatasetError("synthetic frame " + std::to_string(k) + " has nothing in view");
    std::ostringstream stamp;
    stamp << std::fixed << std::setprecision(6) << sequence.timestamps[k];
    const std::string name = stamp.str() + ".png";
    save_rgb(root / "rgb" / name, frame->gray);
    save_depth(root / "depth" / name, frame->depth);
    rgb_index << stamp.str() << " rgb/" << name << '\n';
    depth_index << stamp.str() << " depth/" << name << '\n';
    gt << format_trajectory_line(TrajectoryEntry::from_pose(sequence.timestamps[k], sequence.poses[k])) << '\n';
  }
}

}  // namespace edgevo
