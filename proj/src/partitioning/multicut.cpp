#include "priorseg/partitioning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <unordered_map>

namespace priorseg::partitioning {
namespace {

constexpr double kImprovement = 1e-12;

void check_costs(const SignedCostGraph& g) {
  if (g.costs.size() != g.topology.edges.size())
    throw std::invalid_argument("multicut: " + std::to_string(g.costs.size()) + " costs for " +
                                std::to_string(g.topology.edges.size()) + " edges");
}

}  // namespace

Partition Partition::from_labels(std::vector<int> labels) {
  std::unordered_map<int, int> remap;
  for (int& l : labels) {
    auto [it, inserted] = remap.try_emplace(l, static_cast<int>(remap.size()));
    l = it->second;
  }
  Partition p;
  p.num_clusters = static_cast<int>(remap.size());
  p.labels = std::move(labels);
  return p;
}

SignedCostGraph actions_to_costs(const gnn::GraphTopology& topology, std::span<const double> actions,
                                 const CostMapping& mapping) {
  if (actions.size() != topology.edges.size())
    throw std::invalid_argument("actions_to_costs: " + std::to_string(actions.size()) + " actions for " +
                                std::to_string(topology.edges.size()) + " edges");
  SignedCostGraph g{topology, {}};
  g.costs.reserve(actions.size());
  for (double a : actions) {
    if (mapping.threshold) {
      g.costs.push_back(a > 0.5 ? 1.0 : -1.0);
    } else {
      const double c = std::clamp(a, mapping.clamp, 1.0 - mapping.clamp);
      g.costs.push_back(std::log(c / (1.0 - c)));
    }
  }
  return g;
}

double multicut_objective(const SignedCostGraph& g, const Partition& p) {
  check_costs(g);
  double obj = 0.0;
  for (std::size_t e = 0; e < g.topology.edges.size(); ++e) {
    auto [i, j] = g.topology.edges[e];
    if (p.labels[static_cast<std::size_t>(i)] != p.labels[static_cast<std::size_t>(j)]) obj += g.costs[e];
  }
  return obj;
}

Partition connected_components(const gnn::GraphTopology& topology, const Partition& p) {
  const int n = topology.num_nodes;
  std::vector<int> comp(static_cast<std::size_t>(n), -1);
  int next = 0;
  std::vector<int> stack;
  for (int s = 0; s < n; ++s) {
    if (comp[static_cast<std::size_t>(s)] >= 0) continue;
    comp[static_cast<std::size_t>(s)] = next;
    stack.assign(1, s);
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (int u : topology.neighbors[static_cast<std::size_t>(v)]) {
        if (comp[static_cast<std::size_t>(u)] >= 0) continue;
        if (p.labels[static_cast<std::size_t>(u)] != p.labels[static_cast<std::size_t>(v)]) continue;
        comp[static_cast<std::size_t>(u)] = next;
        stack.push_back(u);
      }
    }
    ++next;
  }
  return Partition::from_labels(std::move(comp));
}

Partition multicut_gaec(const SignedCostGraph& g) {
  check_costs(g);
  const int n = g.topology.num_nodes;
  // Clusters are named by their smallest node; adj[a][b] is the summed cost between clusters.
  std::vector<std::map<int, double>> adj(static_cast<std::size_t>(n));
  for (std::size_t e = 0; e < g.topology.edges.size(); ++e) {
    auto [i, j] = g.topology.edges[e];
    adj[static_cast<std::size_t>(i)][j] += g.costs[e];
    adj[static_cast<std::size_t>(j)][i] += g.costs[e];
  }
  std::vector<int> owner(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) owner[static_cast<std::size_t>(v)] = v;

  while (true) {
    int best_a = -1, best_b = -1;
    double best = 0.0;
    for (int a = 0; a < n; ++a) {
      for (const auto& [b, c] : adj[static_cast<std::size_t>(a)]) {
        if (b <= a) continue;
        if (c > best) {
          best = c;
          best_a = a;
          best_b = b;
        }
      }
    }
    if (best_a < 0) break;
    // Merge best_b into best_a (best_a < best_b keeps the smallest-node name).
    auto& into = adj[static_cast<std::size_t>(best_a)];
    auto& from = adj[static_cast<std::size_t>(best_b)];
    for (const auto& [x, c] : from) {
      if (x == best_a) continue;
      into[x] += c;
      auto& ax = adj[static_cast<std::size_t>(x)];
      ax.erase(best_b);
      ax[best_a] += c;
    }
    into.erase(best_b);
    from.clear();
    for (int& o : owner)
      if (o == best_b) o = best_a;
  }
  return connected_components(g.topology, Partition::from_labels(owner));
}

Partition kernighan_lin_refine(const SignedCostGraph& g, const Partition& p, int max_sweeps) {
  check_costs(g);
  const int n = g.topology.num_nodes;
  if (static_cast<int>(p.labels.size()) != n)
    throw std::invalid_argument("kernighan_lin_refine: partition size mismatch");
  // Incident (neighbour, cost) lists.
  std::vector<std::vector<std::pair<int, double>>> inc(static_cast<std::size_t>(n));
  for (std::size_t e = 0; e < g.topology.edges.size(); ++e) {
    auto [i, j] = g.topology.edges[e];
    inc[static_cast<std::size_t>(i)].emplace_back(j, g.costs[e]);
    inc[static_cast<std::size_t>(j)].emplace_back(i, g.costs[e]);
  }
  Partition cur = connected_components(g.topology, p);
  std::vector<int>& lab = cur.labels;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool improved = false;
    int fresh = *std::max_element(lab.begin(), lab.end()) + 1;

    for (int v = 0; v < n; ++v) {
      std::map<int, double> to;  // cluster -> summed cost of v's edges into it
      for (auto [u, c] : inc[static_cast<std::size_t>(v)]) to[lab[static_cast<std::size_t>(u)]] += c;
      const int own = lab[static_cast<std::size_t>(v)];
      const double w_own = to.count(own) ? to[own] : 0.0;
      // Moving v out of its cluster cuts w_own and uncuts the edges into the target.
      double best_delta = w_own;  // fresh singleton
      int best_target = -1;
      for (const auto& [cl, w] : to) {
        if (cl == own) continue;
        const double delta = w_own - w;
        if (delta < best_delta - kImprovement) {
          best_delta = delta;
          best_target = cl;
        }
      }
      if (best_delta < -kImprovement) {
        lab[static_cast<std::size_t>(v)] = best_target >= 0 ? best_target : fresh++;
        improved = true;
      }
    }

    // Merge adjacent clusters while some pair has a positive connecting cost.
    while (true) {
      std::map<std::pair<int, int>, double> between;
      for (std::size_t e = 0; e < g.topology.edges.size(); ++e) {
        auto [i, j] = g.topology.edges[e];
        int a = lab[static_cast<std::size_t>(i)], b = lab[static_cast<std::size_t>(j)];
        if (a == b) continue;
        if (a > b) std::swap(a, b);
        between[{a, b}] += g.costs[e];
      }
      std::pair<int, int> best_pair{-1, -1};
      double best = kImprovement;
      for (const auto& [key, c] : between) {
        if (c > best) {
          best = c;
          best_pair = key;
        }
      }
      if (best_pair.first < 0) break;
      for (int& l : lab)
        if (l == best_pair.second) l = best_pair.first;
      improved = true;
    }

    cur = connected_components(g.topology, Partition::from_labels(lab));
    if (!improved) break;
  }
  return cur;
}

Partition solve_multicut(const SignedCostGraph& g, int max_sweeps) {
  return kernighan_lin_refine(g, multicut_gaec(g), max_sweeps);
}

BruteForceResult brute_force_multicut(const SignedCostGraph& g) {
  check_costs(g);
  const int n = g.topology.num_nodes;
  if (n > 10) throw std::invalid_argument("brute_force_multicut: at most 10 nodes supported");
  BruteForceResult best;
  if (n == 0) return best;
  // Restricted growth strings enumerate every set partition exactly once, in
  // lexicographic order.
  std::vector<int> rgs(static_cast<std::size_t>(n), 0);
  std::vector<int> prefix_max(static_cast<std::size_t>(n), 0);
  double best_obj = std::numeric_limits<double>::infinity();
  int best_k = 0;
  while (true) {
    Partition p;
    p.labels = rgs;
    p.num_clusters = prefix_max.back() + 1;
    const double obj = multicut_objective(g, p);
    const double tol = 1e-12 * (1.0 + std::abs(best_obj == std::numeric_limits<double>::infinity() ? 0.0 : best_obj));
    if (obj < best_obj - tol || (std::abs(obj - best_obj) <= tol && p.num_clusters < best_k)) {
      best_obj = obj;
      best_k = p.num_clusters;
      best.partition = p;
    }
    // Next restricted growth string.
    int k = n - 1;
    while (k > 0 && rgs[static_cast<std::size_t>(k)] > prefix_max[static_cast<std::size_t>(k) - 1]) --k;
    if (k == 0) break;
    ++rgs[static_cast<std::size_t>(k)];
    prefix_max[static_cast<std::size_t>(k)] =
        std::max(prefix_max[static_cast<std::size_t>(k) - 1], rgs[static_cast<std::size_t>(k)]);
    for (int t = k + 1; t < n; ++t) {
      rgs[static_cast<std::size_t>(t)] = 0;
      prefix_max[static_cast<std::size_t>(t)] = prefix_max[static_cast<std::size_t>(k)];
    }
  }
  best.objective = best_obj;
  return best;
}

imaging::LabelMap partition_to_labelmap(const Partition& p, const imaging::LabelMap& superpixels) {
  imaging::LabelMap out(superpixels.rows(), superpixels.cols());
  for (Eigen::Index i = 0; i < superpixels.size(); ++i) {
    const int s = superpixels.data()[i];
    if (s < 0 || s >= static_cast<int>(p.labels.size()))
      throw std::invalid_argument("partition_to_labelmap: superpixel " + std::to_string(s) +
                                  " has no cluster");
    out.data()[i] = p.labels[static_cast<std::size_t>(s)];
  }
  return out;
}

}  // namespace priorseg::partitioning
