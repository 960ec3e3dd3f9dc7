#pragma once

// Multicut environment step: edge actions -> signed costs -> clustering.
//
// Costs follow the "positive = attractive" convention: the objective is the
// summed cost of cut edges, so cutting a positive edge is penalised and
// cutting a negative edge is rewarded.

#include "priorseg/gnn.hpp"
#include "priorseg/imaging.hpp"

#include <span>
#include <vector>

namespace priorseg::partitioning {

struct SignedCostGraph {
  gnn::GraphTopology topology;
  std::vector<double> costs;  ///< one per topology edge
};

struct Partition {
  std::vector<int> labels;  ///< node -> cluster, contiguous from 0
  int num_clusters = 0;

  /// Relabels to 0..K-1 in order of first appearance.
  static Partition from_labels(std::vector<int> labels);
};

struct CostMapping {
  double clamp = 1e-6;
  bool threshold = false;  ///< map to +-1 around 0.5 instead of the logit
};

/// cost_e = log(a / (1 - a)) with a clamped to [clamp, 1 - clamp].
SignedCostGraph actions_to_costs(const gnn::GraphTopology& topology, std::span<const double> actions,
                                 const CostMapping& mapping = {});

/// Summed cost of edges whose endpoints lie in different clusters.
double multicut_objective(const SignedCostGraph& g, const Partition& p);

/// Splits clusters into connected components of their uncut edges. Leaves the
/// objective unchanged and guarantees that no cut edge joins two nodes that
/// are connected through uncut edges.
Partition connected_components(const gnn::GraphTopology& topology, const Partition& p);

/// Greedy additive edge contraction: contract the heaviest positive edge (ties:
/// lowest endpoint pair), summing parallel costs, until none is positive.
Partition multicut_gaec(const SignedCostGraph& g);

/// Greedy local search: single-node moves to adjacent or fresh clusters and
/// merges of adjacent clusters, each accepted only if it lowers the objective.
Partition kernighan_lin_refine(const SignedCostGraph& g, const Partition& p, int max_sweeps = 3);

/// GAEC followed by refinement.
Partition solve_multicut(const SignedCostGraph& g, int max_sweeps = 3);

struct BruteForceResult {
  Partition partition;
  double objective = 0.0;
};

/// Exhaustive search over all set partitions (at most 10 nodes). Ties are
/// broken by fewer clusters, then lexicographically smaller labels.
BruteForceResult brute_force_multicut(const SignedCostGraph& g);

/// Every pixel takes its superpixel's cluster id.
imaging::LabelMap partition_to_labelmap(const Partition& p, const imaging::LabelMap& superpixels);

}  // namespace priorseg::partitioning
