#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "edgevo/geometry.hpp"
#include "edgevo/image_pipeline.hpp"
#include "edgevo/keyframe.hpp"

namespace edgevo {

struct SelectionConfig {
  int k = 600;
  double lambda = 1e-3;
  std::uint64_t seed = 0x5eed;
  double canny_high = 100.0;  // `a` of the re-observation sigmoid

  void validate() const;
};

/// Every Canny pixel as an EdgePixel with gradient attributes and no depth.
std::vector<EdgePixel> edge_candidates(const EdgeMap& edges);

/// Keeps edges with a valid depth at their pixel and gradient magnitude at
/// least `high`; fills in inverse depth.
std::vector<EdgePixel> cull_edges(std::span<const EdgePixel> edges, const DepthImage& depth, double high);

/// J^T J of the edge's residual row evaluated in its own keyframe.
Mat6 edge_hessian(const EdgePixel& edge, const DistanceField& field, const CameraIntrinsics& intr);

/// 1 / (1 + exp(a - m)).
double reobservation_probability(double gradient_mag, double a);

/// True when the edge re-projects inside the image with positive depth
/// under the prior motion.
bool visibility_check(const EdgePixel& edge, const Pose& prior, const CameraIntrinsics& intr);

/// log det of a symmetric positive definite 6x6 matrix via Cholesky.
double logdet(const Mat6& m);

struct Partition {
  int cell = 0;
  std::vector<std::size_t> members;  // increasing candidate indices
};

struct PartitionGrid {
  int cell_size = 0;
  int cols = 0;
  int rows = 0;
};

/// Square cells of side close to sqrt(W*H/k), shrunk until the grid has at
/// least k cells.
PartitionGrid partition_grid(int width, int height, int k);

/// Non-empty grid cells, ordered by cell id.
std::vector<Partition> build_partitions(std::span<const EdgePixel> edges, int width, int height, int k);

struct SelectionCandidate {
  Mat6 hessian = Mat6::Zero();
  double probability = 1.0;
  bool visible = true;
};

struct SelectionProblem {
  std::vector<Partition> partitions;
  std::vector<SelectionCandidate> candidates;
};

struct SelectionResult {
  std::vector<std::size_t> selected;  // in selection order
  Mat6 information = Mat6::Zero();    // H(S)
  std::size_t gain_evaluations = 0;
  int partitions_visited = 0;
};

/// Visits partitions in seeded random order and takes the candidate with the
/// largest probability-weighted log-det gain from each, until k edges are
/// chosen or partitions run out.
SelectionResult stochastic_partition_greedy(const SelectionProblem& problem, const SelectionConfig& config);

/// Unconstrained stochastic greedy: k rounds, each maximising the gain over
/// a random sample of `sample_size` remaining candidates.
SelectionResult stochastic_greedy(std::span<const SelectionCandidate> candidates, int k, int sample_size,
                                  double lambda, std::uint64_t seed);

/// Normalised objective logdet(H(S) + lambda I) - logdet(lambda I).
double selection_objective(std::span<const SelectionCandidate> candidates, std::span<const std::size_t> set,
                           double lambda);

struct EdgeSelection {
  std::vector<EdgePixel> culled;      // candidate pool after culling
  std::vector<std::size_t> selected;  // indices into `culled`
  SelectionProblem problem;
  SelectionResult greedy;

  std::vector<EdgePixel> selected_edges() const;
};

/// Cull, visibility test under the prior, partitioning and greedy selection
/// for one keyframe. `culled` is empty when no edge survives culling.
EdgeSelection select_edges(const Frame& frame, const Pose& prior, const CameraIntrinsics& intr,
                           const SelectionConfig& config);

}  // namespace edgevo
