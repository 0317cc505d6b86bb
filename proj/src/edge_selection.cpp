#include "edgevo/edge_selection.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

namespace edgevo {

void SelectionConfig::validate() const {
  if (k < 1) throw std::invalid_argument("selection k must be >= 1");
  if (!(lambda > 0.0)) throw std::invalid_argument("selection lambda must be positive");
}

std::vector<EdgePixel> edge_candidates(const EdgeMap& edges) {
  std::vector<EdgePixel> out;
  out.reserve(edges.pixels.size());
  for (const auto& p : edges.pixels) {
    EdgePixel e;
    e.pixel = p;
    e.gradient_dir = edges.direction(p.x(), p.y()).cast<double>();
    e.gradient_mag = edges.magnitude(p.x(), p.y());
    out.push_back(e);
  }
  return out;
}

std::vector<EdgePixel> cull_edges(std::span<const EdgePixel> edges, const DepthImage& depth, double high) {
  std::vector<EdgePixel> out;
  out.reserve(edges.size());
  for (const auto& e : edges) {
    if (!depth.contains(e.pixel.x(), e.pixel.y())) continue;
    const float z = depth(e.pixel.x(), e.pixel.y());
    if (!(z > 0.0f) || !std::isfinite(z)) continue;
    if (e.gradient_mag < high) continue;
    EdgePixel kept = e;
    kept.inv_depth = 1.0 / z;
    kept.measured_inv_depth = kept.inv_depth;
    out.push_back(kept);
  }
  return out;
}

Mat6 edge_hessian(const EdgePixel& edge, const DistanceField& field, const CameraIntrinsics& intr) {
  const auto sample = field_lookup(field, edge.position());
  const auto jw = warp_jacobian(edge.position(), edge.inv_depth, Pose::identity(), intr);
  if (!sample || !jw) return Mat6::Zero();
  const Row6 j = sample->gradient.transpose() * *jw;
  return j.transpose() * j;
}

double reobservation_probability(double gradient_mag, double a) { return 1.0 / (1.0 + std::exp(a - gradient_mag)); }

bool visibility_check(const EdgePixel& edge, const Pose& prior, const CameraIntrinsics& intr) {
  const auto q = warp_unbounded(edge.position(), edge.inv_depth, prior, intr);
  return q && q->x() > 0.0 && q->y() > 0.0 && q->x() < intr.width - 1 && q->y() < intr.height - 1;
}

double logdet(const Mat6& m) {
  Eigen::LLT<Mat6> llt(m);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const auto& l = llt.matrixLLT();
  double sum = 0.0;
  for (int i = 0; i < 6; ++i) sum += std::log(l(i, i));
  return 2.0 * sum;
}

PartitionGrid partition_grid(int width, int height, int k) {
  int side = std::max(1, static_cast<int>(std::lround(std::sqrt(double(width) * height / std::max(k, 1)))));
  auto cells = [&](int s) { return ((width + s - 1) / s) * ((height + s - 1) / s); };
  while (side > 1 && cells(side) < k) --side;
  return {side, (width + side - 1) / side, (height + side - 1) / side};
}

std::vector<Partition> build_partitions(std::span<const EdgePixel> edges, int width, int height, int k) {
  const PartitionGrid grid = partition_grid(width, height, k);
  std::map<int, Partition> cells;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const int cx = std::clamp(edges[i].pixel.x() / grid.cell_size, 0, grid.cols - 1);
    const int cy = std::clamp(edges[i].pixel.y() / grid.cell_size, 0, grid.rows - 1);
    const int id = cy * grid.cols + cx;
    auto& p = cells[id];
    p.cell = id;
    p.members.push_back(i);
  }
  std::vector<Partition> out;
  out.reserve(cells.size());
  for (auto& [id, p] : cells) out.push_back(std::move(p));
  return out;
}

SelectionResult stochastic_partition_greedy(const SelectionProblem& problem, const SelectionConfig& config) {
  SelectionResult result;
  const auto& partitions = problem.partitions;
  const auto& candidates = problem.candidates;
  std::vector<std::size_t> order(partitions.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config.seed);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t k = static_cast<std::size_t>(config.k);
  Mat6 accumulated = config.lambda * Mat6::Identity();
  double base = logdet(accumulated);
  for (std::size_t pi : order) {
    if (result.selected.size() >= k) break;
    ++result.partitions_visited;
    std::size_t best = 0;
    bool found = false;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t m : partitions[pi].members) {
      const auto& c = candidates[m];
      if (!c.visible) continue;
      ++result.gain_evaluations;
      const double gain = logdet(accumulated + c.hessian) - base;
      const double score = c.probability * gain;
      if (!found || score > best_score) {
        best = m;
        best_score = score;
        found = true;
      }
    }
    if (!found) continue;
    result.selected.push_back(best);
    accumulated += candidates[best].hessian;
    result.information += candidates[best].hessian;
    base = logdet(accumulated);
  }
  return result;
}

SelectionResult stochastic_greedy(std::span<const SelectionCandidate> candidates, int k, int sample_size,
                                  double lambda, std::uint64_t seed) {
  SelectionResult result;
  std::vector<std::size_t> remaining;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].visible) remaining.push_back(i);
  }
  std::mt19937_64 rng(seed);
  Mat6 accumulated = lambda * Mat6::Identity();
  double base = logdet(accumulated);
  for (int round = 0; round < k && !remaining.empty(); ++round) {
    const std::size_t n = std::min<std::size_t>(std::max(sample_size, 1), remaining.size());
    // Partial Fisher-Yates: the first n slots become the random sample.
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, remaining.size() - 1);
      std::swap(remaining[i], remaining[pick(rng)]);
    }
    std::size_t best_slot = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      const auto& c = candidates[remaining[i]];
      ++result.gain_evaluations;
      const double score = c.probability * (logdet(accumulated + c.hessian) - base);
      if (score > best_score) {
        best_score = score;
        best_slot = i;
      }
    }
    const std::size_t chosen = remaining[best_slot];
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best_slot));
    result.selected.push_back(chosen);
    accumulated += candidates[chosen].hessian;
    result.information += candidates[chosen].hessian;
    base = logdet(accumulated);
  }
  return result;
}

double selection_objective(std::span<const SelectionCandidate> candidates, std::span<const std::size_t> set,
                           double lambda) {
  Mat6 h = lambda * Mat6::Identity();
  for (std::size_t i : set) h += candidates[i].hessian;
  return logdet(h) - logdet(lambda * Mat6::Identity());
}

std::vector<EdgePixel> EdgeSelection::selected_edges() const {
  std::vector<EdgePixel> out;
  out.reserve(selected.size());
  for (std::size_t i : selected) out.push_back(culled[i]);
  return out;
}

EdgeSelection select_edges(const Frame& frame, const Pose& prior, const CameraIntrinsics& intr,
                           const SelectionConfig& config) {
  EdgeSelection out;
  out.culled = cull_edges(edge_candidates(frame.edges), frame.depth, config.canny_high);
  if (out.culled.empty()) return out;

  out.problem.partitions = build_partitions(out.culled, intr.width, intr.height, config.k);
  out.problem.candidates.resize(out.culled.size());
  for (std::size_t i = 0; i < out.culled.size(); ++i) {
    const auto& e = out.culled[i];
    auto& c = out.problem.candidates[i];
    c.visible = visibility_check(e, prior, intr);
    if (!c.visible) continue;
    c.hessian = edge_hessian(e, frame.pyramid[0], intr);
    c.probability = reobservation_probability(e.gradient_mag, config.canny_high);
  }
  out.greedy = stochastic_partition_greedy(out.problem, config);
  out.selected = out.greedy.selected;
  std::sort(out.selected.begin(), out.selected.end());
  return out;
}

}  // namespace edgevo
