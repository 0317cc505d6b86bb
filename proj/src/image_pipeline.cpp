#include "edgevo/image_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace edgevo {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// tan(22.5 deg) and tan(67.5 deg) split the gradient angle into four NMS sectors.
constexpr double kTan22 = 0.41421356237309503;
constexpr double kTan67 = 2.4142135623730949;

// 1D squared Euclidean distance transform of a sampled function, keeping
// the arg-min site. Sites with f = +inf do not contribute.
struct Envelope1d {
  std::vector<int> v;
  std::vector<double> z;

  explicit Envelope1d(int n) : v(n), z(n + 1) {}

  void run(const double* f, int n, double* d, int* arg) {
    int k = -1;
    for (int q = 0; q < n; ++q) {
      if (f[q] == kInf) continue;
      double s = 0.0;
      while (k >= 0) {
        const int p = v[k];
        s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * q - 2.0 * p);
        if (s <= z[k]) {
          --k;
        } else {
          break;
        }
      }
      if (k < 0) {
        k = 0;
        v[0] = q;
        z[0] = -kInf;
        z[1] = kInf;
        continue;
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = kInf;
    }
    if (k < 0) {
      for (int q = 0; q < n; ++q) {
        d[q] = kInf;
        arg[q] = -1;
      }
      return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
      while (z[j + 1] < q) ++j;
      const double diff = q - v[j];
      d[q] = diff * diff + f[v[j]];
      arg[q] = v[j];
    }
  }
};

}  // namespace

EdgeMap canny_detect(const GrayImage& image, double low, double high) {
  if (!(low > 0.0 && low < high)) throw std::invalid_argument("canny_detect: require 0 < low < high");
  const int w = image.width();
  const int h = image.height();
  EdgeMap out;
  out.mask = Image<std::uint8_t>(w, h, 0);
  out.magnitude = Image<float>(w, h, 0.0f);
  out.direction = Image<Eigen::Vector2f>(w, h, Eigen::Vector2f::Zero());
  if (w < 3 || h < 3) return out;

  Image<int> gx(w, h, 0);
  Image<int> gy(w, h, 0);
  for (int y = 1; y < h - 1; ++y) {
    const std::uint8_t* up = image.row(y - 1);
    const std::uint8_t* mid = image.row(y);
    const std::uint8_t* dn = image.row(y + 1);
    for (int x = 1; x < w - 1; ++x) {
      const int dx = (up[x + 1] + 2 * mid[x + 1] + dn[x + 1]) - (up[x - 1] + 2 * mid[x - 1] + dn[x - 1]);
      const int dy = (dn[x - 1] + 2 * dn[x] + dn[x + 1]) - (up[x - 1] + 2 * up[x] + up[x + 1]);
      gx(x, y) = dx;
      gy(x, y) = dy;
      const double m = std::sqrt(double(dx) * dx + double(dy) * dy);
      out.magnitude(x, y) = static_cast<float>(m);
      if (m > 0.0) out.direction(x, y) = Eigen::Vector2f(float(dx / m), float(dy / m));
    }
  }

  // 0: suppressed, 1: weak candidate, 2: strong.
  Image<std::uint8_t> state(w, h, 0);
  std::vector<Eigen::Vector2i> stack;
  const auto& mag = out.magnitude;
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      const double m = mag(x, y);
      if (m < low) continue;
      const double ax = std::abs(gx(x, y));
      const double ay = std::abs(gy(x, y));
      // Strict on the "previous" neighbour, non-strict on the next one, so
      // plateaus keep exactly one pixel.
      float prev = 0.0f;
      float next = 0.0f;
      if (ay <= ax * kTan22) {
        prev = mag(x - 1, y);
        next = mag(x + 1, y);
      } else if (ay >= ax * kTan67) {
        prev = mag(x, y - 1);
        next = mag(x, y + 1);
      } else if ((gx(x, y) > 0) == (gy(x, y) > 0)) {
        prev = mag(x - 1, y - 1);
        next = mag(x + 1, y + 1);
      } else {
        prev = mag(x + 1, y - 1);
        next = mag(x - 1, y + 1);
      }
      if (!(m > prev && m >= next)) continue;
      if (m >= high) {
        state(x, y) = 2;
        stack.emplace_back(x, y);
      } else {
        state(x, y) = 1;
      }
    }
  }

  while (!stack.empty()) {
    const Eigen::Vector2i p = stack.back();
    stack.pop_back();
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int qx = p.x() + dx;
        const int qy = p.y() + dy;
        if (state(qx, qy) == 1) {
          state(qx, qy) = 2;
          stack.emplace_back(qx, qy);
        }
      }
    }
  }

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (state(x, y) == 2) {
        out.mask(x, y) = 1;
        out.pixels.emplace_back(x, y);
      }
    }
  }
  return out;
}

DistanceField distance_transform(const Image<std::uint8_t>& mask) {
  const int w = mask.width();
  const int h = mask.height();
  DistanceField out;
  out.distance = Image<float>(w, h, std::numeric_limits<float>::infinity());
  out.nearest = Image<Eigen::Vector2f>(w, h, Eigen::Vector2f(-1.0f, -1.0f));
  if (w == 0 || h == 0) return out;

  const int n = std::max(w, h);
  Envelope1d env(n);
  std::vector<double> f(n);
  std::vector<double> d(n);
  std::vector<int> arg(n);

  // Column pass: squared vertical distance and nearest row per pixel.
  Image<double> g(w, h, kInf);
  Image<int> row_of(w, h, -1);
  bool any = false;
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) {
      f[y] = mask(x, y) ? 0.0 : kInf;
      any = any || mask(x, y);
    }
    env.run(f.data(), h, d.data(), arg.data());
    for (int y = 0; y < h; ++y) {
      g(x, y) = d[y];
      row_of(x, y) = arg[y];
    }
  }
  out.has_edges = any;
  if (!any) return out;

  // Row pass over the column result.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[x] = g(x, y);
    env.run(f.data(), w, d.data(), arg.data());
    for (int x = 0; x < w; ++x) {
      const int cx = arg[x];
      out.distance(x, y) = static_cast<float>(std::sqrt(d[x]));
      out.nearest(x, y) = Eigen::Vector2f(float(cx), float(row_of(cx, y)));
    }
  }
  return out;
}

DistanceField downsample_field(const DistanceField& field) {
  const int w = field.width();
  const int h = field.height();
  const int nw = (w + 1) / 2;
  const int nh = (h + 1) / 2;
  DistanceField out;
  out.has_edges = field.has_edges;
  out.distance = Image<float>(nw, nh, 0.0f);
  out.nearest = Image<Eigen::Vector2f>(nw, nh, Eigen::Vector2f::Zero());
  for (int y = 0; y < nh; ++y) {
    const int y0 = 2 * y;
    const int y1 = std::min(2 * y + 1, h - 1);
    for (int x = 0; x < nw; ++x) {
      const int x0 = 2 * x;
      const int x1 = std::min(2 * x + 1, w - 1);
      // Sampling at (2x + 0.5, 2y + 0.5) weights the 2x2 block equally.
      const std::array<Eigen::Vector2i, 4> taps{Eigen::Vector2i(x0, y0), Eigen::Vector2i(x1, y0),
                                                Eigen::Vector2i(x0, y1), Eigen::Vector2i(x1, y1)};
      double sum = 0.0;
      int best = 0;
      for (int i = 0; i < 4; ++i) {
        const float v = field.distance(taps[i].x(), taps[i].y());
        sum += v;
        if (v < field.distance(taps[best].x(), taps[best].y())) best = i;
      }
      out.distance(x, y) = static_cast<float>(0.125 * sum);
      const Eigen::Vector2f src = field.nearest(taps[best].x(), taps[best].y());
      out.nearest(x, y) = (src.array() + 0.5f) * 0.5f - 0.5f;
    }
  }
  return out;
}

DistanceFieldPyramid build_pyramid(const DistanceField& field, double cap) {
  DistanceFieldPyramid pyr;
  DistanceField current = field;
  if (!current.has_edges) {
    // No edges: every level holds the cap so lookups stay finite.
    for (int level = 0; level < DistanceFieldPyramid::kLevels; ++level) {
      const int w = (field.width() + (1 << level) - 1) >> level;
      const int h = (field.height() + (1 << level) - 1) >> level;
      DistanceField& out = pyr.levels[level];
      out.has_edges = false;
      out.distance = Image<float>(w, h, static_cast<float>(cap));
      out.nearest = Image<Eigen::Vector2f>(w, h, Eigen::Vector2f(-1.0f, -1.0f));
    }
    return pyr;
  }
  for (int level = 0; level < DistanceFieldPyramid::kLevels; ++level) {
    if (level > 0) current = downsample_field(current);
    DistanceField capped = current;
    for (float& d : capped.distance.pixels()) d = std::min(d, static_cast<float>(cap));
    pyr.levels[level] = std::move(capped);
  }
  return pyr;
}

std::optional<FieldSample> field_lookup(const DistanceField& field, const Vec2& pt) {
  const int w = field.width();
  const int h = field.height();
  if (!(pt.x() >= 1.0 && pt.y() >= 1.0 && pt.x() <= w - 2.0 && pt.y() <= h - 2.0)) return std::nullopt;
  const int x0 = static_cast<int>(pt.x());
  const int y0 = static_cast<int>(pt.y());
  const double a = pt.x() - x0;
  const double b = pt.y() - y0;
  const double d00 = field.distance(x0, y0);
  const double d10 = field.distance(x0 + 1, y0);
  const double d01 = field.distance(x0, y0 + 1);
  const double d11 = field.distance(x0 + 1, y0 + 1);
  FieldSample s;
  s.distance = (1.0 - b) * ((1.0 - a) * d00 + a * d10) + b * ((1.0 - a) * d01 + a * d11);
  s.gradient.x() = (1.0 - b) * (d10 - d00) + b * (d11 - d01);
  s.gradient.y() = (1.0 - a) * (d01 - d00) + a * (d11 - d10);
  const int nx = static_cast<int>(std::lround(pt.x()));
  const int ny = static_cast<int>(std::lround(pt.y()));
  s.nearest = field.nearest(nx, ny).cast<double>();
  return s;
}

std::shared_ptr<const Frame> preprocess_frame(double timestamp, GrayImage gray, DepthImage depth,
                                              const PreprocessConfig& config) {
  auto frame = std::make_shared<Frame>();
  frame->timestamp = timestamp;
  frame->edges = canny_detect(gray, config.canny);
  frame->pyramid = build_pyramid(distance_transform(frame->edges), config.distance_cap);
  frame->gray = std::move(gray);
  frame->depth = std::move(depth);
  return frame;
}

Eigen::Vector2i to_level0_pixel(const Vec2& coordinate, int level) {
  const double s = std::ldexp(1.0, level);
  return {static_cast<int>(std::lround((coordinate.x() + 0.5) * s - 0.5)),
          static_cast<int>(std::lround((coordinate.y() + 0.5) * s - 0.5))};
}

}  // namespace edgevo
