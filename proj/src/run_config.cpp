#include "edgevo/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <locale>
#include <sstream>
#include <stdexcept>
#include <type_traits>

namespace edgevo {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_value(std::string_view key, std::string_view text) {
  const std::string_view s = trim(text);
  auto fail = [&] { return std::invalid_argument("bad value '" + std::string(s) + "' for " + std::string(key)); };
  if constexpr (std::is_same_v<T, bool>) {
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off") return false;
    throw fail();
  } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
    return std::filesystem::path(std::string(s));
  } else {
    T v{};
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    std::from_chars_result r{};
    if constexpr (std::is_integral_v<T>) {
      if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        r = std::from_chars(begin + 2, end, v, 16);
      } else {
        r = std::from_chars(begin, end, v);
      }
    } else {
      r = std::from_chars(begin, end, v);
    }
    if (s.empty() || r.ec != std::errc() || r.ptr != end) throw fail();
    return v;
  }
}

template <typename T>
std::string format_value(const T& v) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  if constexpr (std::is_same_v<T, bool>) {
    out << (v ? "true" : "false");
  } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
    out << v.string();
  } else {
    out << std::setprecision(10) << v;
  }
  return out.str();
}

struct Field {
  std::string key;
  std::string help;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Access>
Field field(std::string key, std::string help, Access access) {
  using T = std::remove_reference_t<decltype(access(std::declval<RunConfig&>()))>;
  Field f;
  f.key = key;
  f.help = std::move(help);
  f.set = [access, key](RunConfig& c, std::string_view v) { access(c) = parse_value<T>(key, v); };
  f.get = [access](const RunConfig& c) { return format_value(access(const_cast<RunConfig&>(c))); };
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> t;
    t.push_back(field("dataset", "TUM RGBD sequence directory", [](RunConfig& c) -> auto& { return c.dataset; }));
    t.push_back(field("output", "output directory", [](RunConfig& c) -> auto& { return c.output; }));
    t.push_back(field("association_tolerance", "rgb/depth stamp gap, seconds",
                      [](RunConfig& c) -> auto& { return c.association_tolerance; }));
    t.push_back(field("seed", "selection shuffle seed",
                      [](RunConfig& c) -> auto& { return c.odometry.selection.seed; }));
    t.push_back(field("single_thread", "run mapping inline after each keyframe",
                      [](RunConfig& c) -> auto& { return c.odometry.single_thread; }));
    t.push_back(field("selection", "edge selection on/off",
                      [](RunConfig& c) -> auto& { return c.odometry.use_selection; }));
    t.push_back(field("mapping", "sliding-window refinement on/off",
                      [](RunConfig& c) -> auto& { return c.odometry.enable_mapping; }));

    t.push_back(field("fx", "focal length x, pixels", [](RunConfig& c) -> auto& { return c.odometry.intrinsics.fx; }));
    t.push_back(field("fy", "focal length y, pixels", [](RunConfig& c) -> auto& { return c.odometry.intrinsics.fy; }));
    t.push_back(field("cx", "principal point x", [](RunConfig& c) -> auto& { return c.odometry.intrinsics.cx; }));
    t.push_back(field("cy", "principal point y", [](RunConfig& c) -> auto& { return c.odometry.intrinsics.cy; }));
    t.push_back(field("width", "image width", [](RunConfig& c) -> auto& { return c.odometry.intrinsics.width; }));
    t.push_back(field("height", "image height", [](RunConfig& c) -> auto& { return c.odometry.intrinsics.height; }));

    t.push_back(field("canny_low", "hysteresis low threshold, raw Sobel magnitude",
                      [](RunConfig& c) -> auto& { return c.odometry.preprocess.canny.low; }));
    t.push_back(field("canny_high", "hysteresis high threshold; also culls edges for selection",
                      [](RunConfig& c) -> auto& { return c.odometry.preprocess.canny.high; }));
    t.push_back(field("distance_cap", "distance field cap per pyramid level, pixels",
                      [](RunConfig& c) -> auto& { return c.odometry.preprocess.distance_cap; }));

    t.push_back(field("residual_threshold_l0", "outlier threshold level 0, pixels",
                      [](RunConfig& c) -> auto& { return c.odometry.tracking.residual_thresholds[0]; }));
    t.push_back(field("residual_threshold_l1", "outlier threshold level 1",
                      [](RunConfig& c) -> auto& { return c.odometry.tracking.residual_thresholds[1]; }));
    t.push_back(field("residual_threshold_l2", "outlier threshold level 2",
                      [](RunConfig& c) -> auto& { return c.odometry.tracking.residual_thresholds[2]; }));
    t.push_back(field("gradient_margin", "min dot product of matched gradient directions",
                      [](RunConfig& c) -> auto& { return c.odometry.tracking.gradient_margin; }));
    t.push_back(field("huber_delta", "Huber threshold, pixels",
                      [](RunConfig& c) -> auto& { return c.odometry.tracking.huber_delta; }));
    t.push_back(field("max_iterations_l0", "Gauss-Newton iterations level 0",
                      [](RunConfig& c) -> auto& { return c.odometry.tracking.max_iterations[0]; }));
    t.push_back(field("max_iterations_l1", "Gauss-Newton iterations level 1",
                      [](RunConfig& c) -> auto& { return c.odometry.tracking.max_iterations[1]; }));
    t.push_back(field("max_iterations_l2", "Gauss-Newton iterations level 2",
                      [](RunConfig& c) -> auto& { return c.odometry.tracking.max_iterations[2]; }));
    t.push_back(field("convergence_eps", "stop when the step norm falls below this",
                      [](RunConfig& c) -> auto& { return c.odometry.tracking.convergence_eps; }));
    t.push_back(field("max_step_halvings", "line search halvings",
                      [](RunConfig& c) -> auto& { return c.odometry.tracking.max_step_halvings; }));
    t.push_back(field("damping", "diagonal damping of the tracking normal equations",
                      [](RunConfig& c) -> auto& { return c.odometry.tracking.damping; }));
    t.push_back(field("keyframe_w1", "weight of mean flow in the keyframe test",
                      [](RunConfig& c) -> auto& { return c.odometry.tracking.keyframe_w1; }));
    t.push_back(field("keyframe_w2", "weight of translation-only flow",
                      [](RunConfig& c) -> auto& { return c.odometry.tracking.keyframe_w2; }));
    t.push_back(field("keyframe_ratio", "new keyframe when inliers drop below this x running mean",
                      [](RunConfig& c) -> auto& { return c.odometry.tracking.keyframe_correspondence_ratio; }));
    t.push_back(field("keyframe_interval", "max seconds between keyframes",
                      [](RunConfig& c) -> auto& { return c.odometry.tracking.keyframe_max_interval; }));

    t.push_back(field("edges_k", "edges selected per keyframe",
                      [](RunConfig& c) -> auto& { return c.odometry.selection.k; }));
    t.push_back(field("lambda", "log-det regularizer", [](RunConfig& c) -> auto& { return c.odometry.selection.lambda; }));
    t.push_back(field("selection_a", "re-observation sigmoid offset",
                      [](RunConfig& c) -> auto& { return c.odometry.selection.canny_high; }));

    t.push_back(field("window_size", "keyframes in the sliding window",
                      [](RunConfig& c) -> auto& { return c.odometry.mapping.window_size; }));
    t.push_back(field("window_iterations", "Gauss-Newton iterations per keyframe",
                      [](RunConfig& c) -> auto& { return c.odometry.mapping.iterations; }));
    t.push_back(field("activation_cell", "activation grid cell, pixels",
                      [](RunConfig& c) -> auto& { return c.odometry.mapping.activation_cell; }));
    t.push_back(field("activation_angle", "max gradient angle for activation, degrees",
                      [](RunConfig& c) -> auto& { return c.odometry.mapping.activation_max_angle_deg; }));
    t.push_back(field("window_residual_threshold", "window outlier threshold, pixels",
                      [](RunConfig& c) -> auto& { return c.odometry.mapping.residual_threshold; }));
    t.push_back(field("refine_intrinsics", "optimize fx, fy, cx, cy in the window",
                      [](RunConfig& c) -> auto& { return c.odometry.mapping.refine_intrinsics; }));
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  const std::string_view k = trim(key);
  for (const auto& f : fields()) {
    if (f.key == k) {
      f.set(*this, value);
      if (k == "canny_high") odometry.selection.canny_high = odometry.preprocess.canny.high;
      return;
    }
  }
  throw std::invalid_argument("unknown config key '" + std::string(k) + "'");
}

void RunConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::invalid_argument("cannot open config " + file.string());
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::string_view s = line;
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument(file.string() + ":" + std::to_string(number) + ": expected key = value");
    }
    try {
      set(s.substr(0, eq), s.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(file.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& f : fields()) out += "# " + f.help + "\n" + f.key + " = " + f.get(*this) + "\n";
  return out;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

}  // namespace edgevo
