#pragma once

// Prior-based reward functions and their decomposition onto subgraphs.

#include "priorseg/imaging.hpp"
#include "priorseg/partitioning.hpp"
#include "priorseg/rag.hpp"

#include <span>
#include <vector>

namespace priorseg::rewards {

struct RewardConfig {
  // circles
  double cht_threshold = 0.8;     ///< gamma
  double expected_objects = 4.0;  ///< k
  double theta = 4.0;             ///< shaping exponent
  std::pair<double, double> cht_radius_range{4.0, 16.0};
  // ring (distances in pixels; negative normalisers take their defaults)
  double ring_radius = 0.0;           ///< j
  double center_row = 0.0;            ///< c
  double center_col = 0.0;
  double max_center_distance = 0.0;   ///< m
  double bg_inner_scale = -1.0;       ///< gamma_bg, default 0.25 j
  double bg_outer_scale = -1.0;       ///< eta, default 0.25 (m - j)
  double fg_scale = -1.0;             ///< delta_fg, default 0.15 j
  // rotated box template
  double box_long = 10.0;
  double box_short = 6.0;
  double box_long_tolerance = 3.0;
  double box_short_tolerance = 2.0;
  double box_angle_tolerance = 0.35;  ///< radians

  /// Fills ring geometry from the image size (j = ring_fraction * size,
  /// c = image center, m = center-to-corner distance).
  void set_ring_geometry(int height, int width, double ring_fraction);
  double inner_scale() const { return bg_inner_scale > 0 ? bg_inner_scale : 0.25 * ring_radius; }
  double outer_scale() const {
    return bg_outer_scale > 0 ? bg_outer_scale : 0.25 * (max_center_distance - ring_radius);
  }
  double foreground_scale() const { return fg_scale > 0 ? fg_scale : 0.15 * ring_radius; }

  /// Throws std::invalid_argument when a constraint is violated.
  void validate() const;
};

/// Rewards per subgraph, one list per subgraph size in schedule order.
struct RewardVector {
  std::vector<std::vector<double>> per_size;
  double global_foreground = 0.0;  ///< per-class global scalars (informational)
  double global_background = 0.0;

  double mean() const;
  std::size_t count() const;
};

/// Unnormalised Gaussian kernel exp(-u^2 / 2).
double gaussian_kernel(double u);

/// exp(r theta) / exp(theta).
double r_exp(double r, double theta);

double circles_local_reward(double cht, const RewardConfig& cfg);
double circles_global_reward(int predicted, const RewardConfig& cfg);
/// r_local + r_global clamped to [0, 1].
double circles_object_reward(double cht, int predicted, const RewardConfig& cfg);
/// r_exp(n / k) for n <= k, otherwise 1; given to the largest object.
double circles_background_reward(int predicted, const RewardConfig& cfg);

/// Edge reward from the mean distance h of the incident objects' centers to
/// the image center, the edge action a and the incident object rewards.
double ring_edge_reward_at(double h, double action, double r_o1, double r_o2, const RewardConfig& cfg);
double ring_edge_reward(const imaging::ObjectStats& o1, const imaging::ObjectStats& o2, double action,
                        double r_o1, double r_o2, const RewardConfig& cfg);

/// Gaussian similarity of the object's rotated box to the template, with the
/// orientation compared against the radial direction at the object center,
/// passed through r_exp. Degenerate boxes score 0.
double box_object_reward(const imaging::ObjectStats& stats, const RewardConfig& cfg);

/// Soft Dice (2 sum a*g + eps) / (sum a + sum g + eps) over the subgraph's edges.
double supervised_dice_reward(std::span<const double> actions, std::span<const double> gt_edges,
                              const rag::SubGraph& sub);

/// Superpixel reward = its object's reward; edge reward = max over endpoints;
/// subgraph reward = mean over its edges.
std::vector<double> decompose_rewards(std::span<const double> object_rewards,
                                      const partitioning::Partition& partition,
                                      const gnn::GraphTopology& topology,
                                      std::span<const rag::SubGraph> subgraphs);

/// Mean of per-edge rewards over each subgraph.
std::vector<double> subgraph_means(std::span<const double> edge_rewards,
                                   std::span<const rag::SubGraph> subgraphs);

/// Per-object rewards for the circles prior on a predicted pixel labelling
/// (compacted). The largest object (ties: lowest id) is background.
struct CirclesObjects {
  std::vector<double> rewards;
  int background = -1;
  int predicted_foreground = 0;
  double global_foreground = 0.0;
  double global_background = 0.0;
};
CirclesObjects circles_object_rewards(const imaging::LabelMap& prediction, const RewardConfig& cfg);

/// Per-edge ring rewards for a predicted partition.
std::vector<double> ring_edge_rewards(const imaging::LabelMap& prediction,
                                      const partitioning::Partition& partition,
                                      const gnn::GraphTopology& topology,
                                      std::span<const double> actions, const RewardConfig& cfg);

/// Ground-truth merge labels per edge (1 when both superpixels map to the same
/// truth label by majority vote).
std::vector<double> ground_truth_edge_labels(const imaging::LabelMap& superpixels,
                                             const imaging::LabelMap& truth,
                                             const gnn::GraphTopology& topology);

/// Majority truth label per superpixel.
std::vector<int> superpixel_majority(const imaging::LabelMap& superpixels, const imaging::LabelMap& truth);

/// Reward surface over CHT values and predicted counts for the circles prior.
struct SurfacePoint {
  double cht;
  int predicted;
  double reward;
};
std::vector<SurfacePoint> circles_reward_surface(int cht_steps, int max_predicted, const RewardConfig& cfg);

}  // namespace priorseg::rewards
