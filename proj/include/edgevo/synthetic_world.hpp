#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "edgevo/geometry.hpp"
#include "edgevo/image.hpp"

namespace edgevo {

struct Segment3 {
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
};

/// Planar convex quad with a flat grey level.
struct Face {
  std::array<Vec3, 4> corners;
  double shade = 0.0;
  Vec3 outward = Vec3::Zero();  // faces of closed solids; zero disables culling
};

struct SyntheticScene {
  std::vector<Segment3> segments;  // world frame, meters; the edges of `faces`
  std::vector<Face> faces;
  double background = 45.0;
};

/// Cross-section of the thin bars standing in for free line segments, meters.
inline constexpr double kBarThickness = 0.04;

/// Solid box with the given axes (columns) and edge lengths; adds 6 faces
/// and 12 segments. Face shades depend on the box axis plus `shade_offset`.
void add_box(SyntheticScene& scene, const Vec3& center, const Mat3& axes, const Vec3& size, double shade_offset);
void add_box(SyntheticScene& scene, const Vec3& center, const Vec3& size);
/// Thin square bar from a to b.
void add_bar(SyntheticScene& scene, const Vec3& a, const Vec3& b, double thickness, double shade_offset);
SyntheticScene cube_scene(const Vec3& center, double side);

/// Random boxes and bars inside the axis-aligned region [lo, hi].
SyntheticScene random_scene(std::uint64_t seed, const Vec3& lo, const Vec3& hi, int boxes, int bars);

/// Fixture scenes. "compact" sits within 0.5 m of (0, 0, 2) for orbits,
/// "wide" spans the x range walked by the line trajectory, "rich" fills
/// the image densely from the identity pose.
SyntheticScene named_scene(const std::string& name, std::uint64_t seed);

struct Segment2 {
  Vec2 a = Vec2::Zero();
  Vec2 b = Vec2::Zero();
  double inv_depth_a = 0.0;
  double inv_depth_b = 0.0;
};

struct RenderedFrame {
  GrayImage gray;
  DepthImage depth;               // meters, 0 where nothing was hit
  Image<std::uint8_t> edge_mask;  // visible segment pixels
  DepthImage edge_depth;          // analytic depth on edge_mask pixels
  std::vector<Segment2> projected;  // segments in view, occluded or not
};

/// Renders the scene seen from camera-to-world `pose`: z-buffered faces with
/// 3x3 supersampling for anti-aliased steps. Depth on edge_mask pixels is the
/// analytic segment depth; background pixels within 2 pixels of a visible
/// segment take its depth too. nullopt when no segment is in view.
std::optional<RenderedFrame> render_frame(const SyntheticScene& scene, const Pose& pose,
                                          const CameraIntrinsics& intr);

enum class TrajectoryKind { kStatic, kLine, kOrbit };

std::optional<TrajectoryKind> parse_trajectory_kind(const std::string& name);
const char* to_string(TrajectoryKind kind);

struct TrajectoryParams {
  Vec3 orbit_center{0.0, 0.0, 2.0};
  double orbit_radius = 2.0;
  Vec3 line_direction{1.0, 0.0, 0.0};
};

/// Camera-to-world poses starting at identity. `step` is meters per frame
/// for lines and radians per frame for orbits (about the y axis, looking at
/// the orbit center).
std::vector<Pose> generate_trajectory(TrajectoryKind kind, int length, double step,
                                      const TrajectoryParams& params = {});

struct SyntheticSequence {
  SyntheticScene scene;
  std::vector<Pose> poses;
  std::vector<double> timestamps;
};

/// Default fixture for a trajectory kind: 30 Hz stamps starting at 1.0 s.
SyntheticSequence make_sequence(TrajectoryKind kind, int frames, std::uint64_t seed,
                                const std::string& scene_name = "");

/// Writes rgb/, depth/, rgb.txt, depth.txt and groundtruth.txt.
void write_tum_sequence(const SyntheticSequence& sequence, const CameraIntrinsics& intr,
                        const std::filesystem::path& root);

}  // namespace edgevo
