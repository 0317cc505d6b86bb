#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "edgevo/geometry.hpp"
#include "edgevo/image.hpp"

namespace edgevo {

/// Canny thresholds on the L2 norm of the raw 3x3 Sobel response of an
/// 8-bit image.
struct CannyThresholds {
  double low = 40.0;
  double high = 100.0;
};

struct EdgeMap {
  Image<std::uint8_t> mask;         // 1 on edge pixels
  Image<float> magnitude;           // Sobel gradient magnitude
  Image<Eigen::Vector2f> direction; // unit gradient, zero where magnitude is 0
  std::vector<Eigen::Vector2i> pixels;  // edge pixels in raster order

  int width() const { return mask.width(); }
  int height() const { return mask.height(); }
  std::size_t count() const { return pixels.size(); }
};

/// Sobel gradients, non-maximum suppression and hysteresis. A uniform
/// image yields an empty map.
EdgeMap canny_detect(const GrayImage& image, double low, double high);
inline EdgeMap canny_detect(const GrayImage& image, const CannyThresholds& t) {
  return canny_detect(image, t.low, t.high);
}

struct DistanceField {
  Image<float> distance;          // pixels at this resolution
  Image<Eigen::Vector2f> nearest; // coordinate of the closest edge pixel
  bool has_edges = false;

  int width() const { return distance.width(); }
  int height() const { return distance.height(); }
};

/// Exact Euclidean distance transform (lower envelope of parabolas, one
/// pass per axis) that also propagates the index of the closest edge.
/// Distances are not capped. With no edges the field is marked
/// `has_edges == false` and holds +inf.
DistanceField distance_transform(const Image<std::uint8_t>& mask);
inline DistanceField distance_transform(const EdgeMap& edges) { return distance_transform(edges.mask); }

struct DistanceFieldPyramid {
  static constexpr int kLevels = 3;
  std::array<DistanceField, kLevels> levels;

  const DistanceField& operator[](int level) const { return levels[level]; }
  bool has_edges() const { return levels[0].has_edges; }
};

/// Halves resolution per level by bilinear sampling at the centre of each
/// 2x2 block; distances are rescaled to level pixels and every level is
/// capped at `cap` level pixels.
DistanceFieldPyramid build_pyramid(const DistanceField& field, double cap = 30.0);

/// One bilinear halving step, exposed for testing. Distances are scaled by 0.5.
DistanceField downsample_field(const DistanceField& field);

struct FieldSample {
  double distance = 0.0;
  Vec2 gradient = Vec2::Zero();
  Vec2 nearest = Vec2::Zero();
};

/// Bilinear distance at a sub-pixel location with the derivative of the
/// interpolated surface. Points must lie in [1, size-2] on both axes.
std::optional<FieldSample> field_lookup(const DistanceField& field, const Vec2& pt);

/// Everything tracking, selection and mapping need from one RGBD frame.
struct Frame {
  double timestamp = 0.0;
  GrayImage gray;
  DepthImage depth;
  EdgeMap edges;
  DistanceFieldPyramid pyramid;
};

struct PreprocessConfig {
  CannyThresholds canny;
  double distance_cap = 30.0;
};

std::shared_ptr<const Frame> preprocess_frame(double timestamp, GrayImage gray, DepthImage depth,
                                              const PreprocessConfig& config);

/// Level-ell coordinate -> level-0 pixel under the pyramid's centre convention.
Eigen::Vector2i to_level0_pixel(const Vec2& coordinate, int level);

}  // namespace edgevo
