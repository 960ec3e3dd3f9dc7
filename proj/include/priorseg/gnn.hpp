#pragma once

// Message-passing graph convolutions and MLPs on top of the autodiff tape.

#include "priorseg/autodiff.hpp"

#include <utility>
#include <vector>

namespace priorseg::gnn {

/// Undirected simple graph. Edges are stored once with first < second, in the
/// order given at construction; neighbor lists are derived from that order.
struct GraphTopology {
  int num_nodes = 0;
  std::vector<std::pair<int, int>> edges;
  std::vector<std::vector<int>> neighbors;

  /// Validates and normalizes (i, j) to i < j. Throws on self-loops,
  /// duplicate edges or out-of-range node ids.
  static GraphTopology from_edges(int num_nodes, std::vector<std::pair<int, int>> edges);

  int num_edges() const { return static_cast<int>(edges.size()); }
};

/// Dense stack with ReLU between layers and a linear output. A view over
/// parameters owned by a ParameterSet; copying an Mlp shares the weights.
class Mlp {
 public:
  Mlp() = default;

  /// Registers freshly initialised layers "<prefix>layer{k}.{weight,bias}".
  static Mlp create(ad::ParameterSet& params, const std::string& prefix, std::vector<int> sizes,
                    std::uint64_t seed);
  /// Binds to layers already present in params.
  static Mlp bind(ad::ParameterSet& params, const std::string& prefix, std::size_t num_layers);

  /// With trainable = false the weights enter the tape as constants.
  ad::Var operator()(ad::Var x, bool trainable = true) const;

  int in_dim() const;
  int out_dim() const;
  std::size_t num_layers() const { return weights_.size(); }

 private:
  std::vector<ad::Parameter*> weights_;
  std::vector<ad::Parameter*> biases_;
};

/// f_i <- gamma(f_i, mean_{j in N(i)} phi(f_i, f_j)); isolated nodes aggregate to zero.
ad::Var actor_conv(const GraphTopology& topology, ad::Var features, const Mlp& gamma,
                   const Mlp& phi, bool trainable = true);

/// As actor_conv with the edge action appended to every message:
/// f_i <- gamma(f_i, mean_j phi(f_i, f_j, a_ij)). actions is (num_edges x 1).
ad::Var critic_conv(const GraphTopology& topology, ad::Var features, ad::Var actions,
                    const Mlp& gamma, const Mlp& phi, bool trainable = true);

/// Per edge (i, j), i < j: head(f_i, f_j). Rows follow the edge list.
ad::Var edge_readout(ad::Var node_features, const GraphTopology& topology, const Mlp& head,
                     bool trainable = true);

}  // namespace priorseg::gnn
