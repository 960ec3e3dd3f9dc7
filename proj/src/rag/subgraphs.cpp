#include "priorseg/rag.hpp"

#include <algorithm>
#include <iostream>
#include <map>
#include <queue>
#include <random>

namespace priorseg::rag {
namespace {

// Incident edges per node as (neighbour, edge index), sorted by neighbour.
std::vector<std::vector<std::pair<int, int>>> incidence(const gnn::GraphTopology& g) {
  std::vector<std::vector<std::pair<int, int>>> inc(static_cast<std::size_t>(g.num_nodes));
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    auto [i, j] = g.edges[e];
    inc[static_cast<std::size_t>(i)].emplace_back(j, static_cast<int>(e));
    inc[static_cast<std::size_t>(j)].emplace_back(i, static_cast<int>(e));
  }
  for (auto& v : inc) std::sort(v.begin(), v.end());
  return inc;
}

}  // namespace

std::vector<SubGraph> extract_subgraphs(const gnn::GraphTopology& topology, int size,
                                        std::uint64_t seed, bool* skipped) {
  if (size < 1) throw std::invalid_argument("extract_subgraphs: size must be >= 1");
  const int num_edges = topology.num_edges();
  if (skipped) *skipped = false;
  if (size > num_edges) {
    if (skipped) *skipped = true;
    return {};
  }
  const auto inc = incidence(topology);
  std::mt19937_64 rng(seed);
  std::vector<char> covered(static_cast<std::size_t>(num_edges), 0);
  int remaining = num_edges;
  std::vector<SubGraph> out;

  std::vector<char> in_sg(static_cast<std::size_t>(num_edges), 0);
  std::vector<char> in_vtx(static_cast<std::size_t>(topology.num_nodes), 0);

  while (remaining > 0) {
    std::vector<int> uncovered;
    for (int e = 0; e < num_edges; ++e)
      if (!covered[static_cast<std::size_t>(e)]) uncovered.push_back(e);
    const int start = uncovered[std::uniform_int_distribution<std::size_t>(0, uncovered.size() - 1)(rng)];

    std::vector<int> sg_edges;
    std::vector<int> sg_nodes;
    auto add_edge = [&](int e) {
      in_sg[static_cast<std::size_t>(e)] = 1;
      sg_edges.push_back(e);
    };
    auto add_node = [&](int v) {
      if (!in_vtx[static_cast<std::size_t>(v)]) {
        in_vtx[static_cast<std::size_t>(v)] = 1;
        sg_nodes.push_back(v);
      }
    };

    // Min-queue on (priority, node): equal priorities pop the lowest node first.
    std::priority_queue<std::pair<int, int>, std::vector<std::pair<int, int>>, std::greater<>> pq;
    int prio = 0;
    int n_draws = 0;
    auto [si, sj] = topology.edges[static_cast<std::size_t>(start)];
    pq.emplace(prio, si);
    pq.emplace(prio, sj);
    add_edge(start);
    add_node(si);
    add_node(sj);

    while (static_cast<int>(sg_edges.size()) < size && !pq.empty()) {
      auto [n_prio, n] = pq.top();
      pq.pop();
      ++n_draws;
      // Close the subgraph: edges from n back into the current vertex set.
      int added = 0;
      int left = 0;
      for (auto [j, e] : inc[static_cast<std::size_t>(n)]) {
        if (in_sg[static_cast<std::size_t>(e)]) continue;
        if (in_vtx[static_cast<std::size_t>(j)] && static_cast<int>(sg_edges.size()) < size) {
          add_edge(e);
          ++added;
          n_draws = 0;
        } else {
          ++left;
        }
      }
      if (left > 0) pq.emplace(n_prio - (added - 1), n);
      // Stall escape: grow to the lowest-index outside neighbour of n.
      if (static_cast<int>(sg_edges.size()) < size && static_cast<int>(pq.size()) <= n_draws) {
        for (auto [j, e] : inc[static_cast<std::size_t>(n)]) {
          if (in_vtx[static_cast<std::size_t>(j)]) continue;
          ++prio;
          pq.emplace(prio, j);
          add_edge(e);
          add_node(j);
          break;
        }
      }
    }

    const bool complete = static_cast<int>(sg_edges.size()) == size;
    for (int e : sg_edges) {
      if (!covered[static_cast<std::size_t>(e)]) {
        covered[static_cast<std::size_t>(e)] = 1;
        --remaining;
      }
      in_sg[static_cast<std::size_t>(e)] = 0;
    }
    for (int v : sg_nodes) in_vtx[static_cast<std::size_t>(v)] = 0;
    if (!complete) {
      // Connected component with fewer than `size` edges: it cannot be covered.
      std::cerr << "extract_subgraphs: component of edge " << start << " has fewer than " << size
                << " edges; left uncovered\n";
      continue;
    }
    SubGraph sg;
    sg.edges = std::move(sg_edges);
    std::sort(sg.edges.begin(), sg.edges.end());
    sg.nodes = std::move(sg_nodes);
    std::sort(sg.nodes.begin(), sg.nodes.end());
    out.push_back(std::move(sg));
  }
  return out;
}

}  // namespace priorseg::rag
