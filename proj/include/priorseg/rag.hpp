#pragma once

// Region adjacency graphs over superpixels and dense fixed-size subgraph
// extraction.

#include "priorseg/gnn.hpp"
#include "priorseg/imaging.hpp"

#include <cstdint>
#include <memory>
#include <vector>

namespace priorseg::rag {

struct Rag {
  gnn::GraphTopology topology;
  ad::Matrix features;                       ///< one row per superpixel
  std::vector<int> mass;                     ///< pixel count per node
  std::vector<Eigen::Vector2d> centers;      ///< center of mass (row, col)
  std::shared_ptr<const imaging::LabelMap> superpixels;

  int num_nodes() const { return topology.num_nodes; }
  int num_edges() const { return topology.num_edges(); }
};

/// Nodes are the compacted labels; edges join labels that are 4-neighbours
/// somewhere, stored once with i < j and sorted lexicographically.
Rag build_rag(const imaging::LabelMap& superpixels, ad::Matrix node_features);

/// Edge list only (no features), same ordering as build_rag.
std::vector<std::pair<int, int>> adjacent_label_pairs(const imaging::LabelMap& superpixels);

struct SubGraph {
  std::vector<int> edges;  ///< sorted edge indices, exactly the requested size
  std::vector<int> nodes;  ///< sorted nodes spanned by the edges
};

/// Covers every edge with connected subgraphs of exactly `size` edges, grown
/// densely from uncovered start edges (start edge drawn with the seed). Returns
/// an empty list (and reports through `skipped`) when size > |E|.
std::vector<SubGraph> extract_subgraphs(const gnn::GraphTopology& topology, int size,
                                        std::uint64_t seed, bool* skipped = nullptr);
inline std::vector<SubGraph> extract_subgraphs(const Rag& rag, int size, std::uint64_t seed,
                                               bool* skipped = nullptr) {
  return extract_subgraphs(rag.topology, size, seed, skipped);
}

/// Configured subgraph sizes; defaults to {6, 12, 32, 128}.
struct SubgraphSchedule {
  std::vector<int> sizes{6, 12, 32, 128};

  /// Throws std::invalid_argument on an empty or non-positive size list.
  void validate() const;
  /// Sizes usable on a graph with num_edges edges.
  std::vector<int> effective(int num_edges) const;
};

}  // namespace priorseg::rag
