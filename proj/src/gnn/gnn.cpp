#include "priorseg/gnn.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace priorseg::gnn {

GraphTopology GraphTopology::from_edges(int num_nodes, std::vector<std::pair<int, int>> edges) {
  if (num_nodes < 0) throw std::invalid_argument("negative node count");
  GraphTopology g;
  g.num_nodes = num_nodes;
  g.neighbors.assign(static_cast<std::size_t>(num_nodes), {});
  std::set<std::pair<int, int>> seen;
  for (auto [i, j] : edges) {
    if (i < 0 || j < 0 || i >= num_nodes || j >= num_nodes)
      throw std::invalid_argument("edge (" + std::to_string(i) + ", " + std::to_string(j) +
                                  ") out of range");
    if (i == j) throw std::invalid_argument("self-loop at node " + std::to_string(i));
    if (i > j) std::swap(i, j);
    if (!seen.insert({i, j}).second)
      throw std::invalid_argument("duplicate edge (" + std::to_string(i) + ", " + std::to_string(j) + ")");
    g.edges.emplace_back(i, j);
    g.neighbors[static_cast<std::size_t>(i)].push_back(j);
    g.neighbors[static_cast<std::size_t>(j)].push_back(i);
  }
  return g;
}

Mlp Mlp::create(ad::ParameterSet& params, const std::string& prefix, std::vector<int> sizes,
                std::uint64_t seed) {
  ad::append_dense_layers(params, prefix, sizes, seed);
  return bind(params, prefix, sizes.size() - 1);
}

Mlp Mlp::bind(ad::ParameterSet& params, const std::string& prefix, std::size_t num_layers) {
  Mlp m;
  for (std::size_t k = 0; k < num_layers; ++k) {
    const std::string stem = prefix + "layer" + std::to_string(k);
    m.weights_.push_back(&params.at(stem + ".weight"));
    m.biases_.push_back(&params.at(stem + ".bias"));
  }
  return m;
}

ad::Var Mlp::operator()(ad::Var x, bool trainable) const {
  if (weights_.empty()) throw std::logic_error("empty Mlp");
  if (x.cols() != in_dim())
    throw ad::ShapeError("mlp", "input " + ad::shape_string(x.value()) + " expects " +
                                    std::to_string(in_dim()) + " columns");
  ad::Tape& t = x.tape();
  ad::Var h = x;
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    h = ad::add(ad::matmul(h, t.param(*weights_[k], trainable)), t.param(*biases_[k], trainable));
    if (k + 1 < weights_.size()) h = ad::relu(h);
  }
  return h;
}

int Mlp::in_dim() const { return static_cast<int>(weights_.front()->value.rows()); }
int Mlp::out_dim() const { return static_cast<int>(weights_.back()->value.cols()); }

namespace {

// Directed message endpoints: message k goes from src[k] to dst[k]; every
// undirected edge e contributes messages 2e (j -> i) and 2e+1 (i -> j).
struct Messages {
  std::vector<int> dst, src, edge;
};

Messages directed(const GraphTopology& g) {
  Messages m;
  m.dst.reserve(g.edges.size() * 2);
  m.src.reserve(g.edges.size() * 2);
  m.edge.reserve(g.edges.size() * 2);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    auto [i, j] = g.edges[e];
    m.dst.push_back(i);
    m.src.push_back(j);
    m.edge.push_back(static_cast<int>(e));
    m.dst.push_back(j);
    m.src.push_back(i);
    m.edge.push_back(static_cast<int>(e));
  }
  return m;
}

void check_features(const char* prim, const GraphTopology& g, ad::Var features) {
  if (features.rows() != g.num_nodes)
    throw ad::ShapeError(prim, ad::shape_string(features.value()) + " for " +
                                   std::to_string(g.num_nodes) + " nodes");
}

ad::Var convolve(const GraphTopology& g, ad::Var features, const ad::Var* actions, const Mlp& gamma,
                 const Mlp& phi, bool trainable) {
  ad::Tape& t = features.tape();
  const Messages msg = directed(g);
  const int d = static_cast<int>(features.cols());
  ad::Var aggregate;
  if (msg.dst.empty()) {
    aggregate = t.constant(ad::Matrix::Zero(g.num_nodes, phi.out_dim()));
  } else {
    std::vector<ad::Var> parts{ad::gather_rows(features, msg.dst), ad::gather_rows(features, msg.src)};
    if (actions != nullptr) parts.push_back(ad::gather_rows(*actions, msg.edge));
    ad::Var messages = phi(ad::concat_cols(parts), trainable);
    aggregate = ad::segment_mean(messages, msg.dst, g.num_nodes);
  }
  const std::vector<ad::Var> self_and_agg{features, aggregate};
  if (gamma.in_dim() != d + phi.out_dim())
    throw ad::ShapeError("graph_conv", "gamma expects " + std::to_string(gamma.in_dim()) +
                                           " inputs, got " + std::to_string(d + phi.out_dim()));
  return gamma(ad::concat_cols(self_and_agg), trainable);
}

}  // namespace

ad::Var actor_conv(const GraphTopology& topology, ad::Var features, const Mlp& gamma,
                   const Mlp& phi, bool trainable) {
  check_features("actor_conv", topology, features);
  if (phi.in_dim() != 2 * features.cols())
    throw ad::ShapeError("actor_conv", "phi expects " + std::to_string(phi.in_dim()) +
                                           " inputs for feature dim " + std::to_string(features.cols()));
  return convolve(topology, features, nullptr, gamma, phi, trainable);
}

ad::Var critic_conv(const GraphTopology& topology, ad::Var features, ad::Var actions,
                    const Mlp& gamma, const Mlp& phi, bool trainable) {
  check_features("critic_conv", topology, features);
  if (actions.rows() != topology.num_edges() || actions.cols() != 1)
    throw ad::ShapeError("critic_conv", "actions " + ad::shape_string(actions.value()) + " for " +
                                            std::to_string(topology.num_edges()) + " edges");
  if (phi.in_dim() != 2 * features.cols() + 1)
    throw ad::ShapeError("critic_conv", "phi expects " + std::to_string(phi.in_dim()) +
                                            " inputs for feature dim " + std::to_string(features.cols()));
  return convolve(topology, features, &actions, gamma, phi, trainable);
}

ad::Var edge_readout(ad::Var node_features, const GraphTopology& topology, const Mlp& head,
                     bool trainable) {
  check_features("edge_readout", topology, node_features);
  if (head.in_dim() != 2 * node_features.cols())
    throw ad::ShapeError("edge_readout", "head expects " + std::to_string(head.in_dim()) +
                                             " inputs for feature dim " +
                                             std::to_string(node_features.cols()));
  std::vector<int> lo, hi;
  lo.reserve(topology.edges.size());
  hi.reserve(topology.edges.size());
  for (auto [i, j] : topology.edges) {
    lo.push_back(std::min(i, j));
    hi.push_back(std::max(i, j));
  }
  const std::vector<ad::Var> ends{ad::gather_rows(node_features, lo), ad::gather_rows(node_features, hi)};
  return head(ad::concat_cols(ends), trainable);
}

}  // namespace priorseg::gnn
