#include "priorseg/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>

namespace priorseg::rewards {
namespace {

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void RewardConfig::set_ring_geometry(int height, int width, double ring_fraction) {
  center_row = (height - 1) / 2.0;
  center_col = (width - 1) / 2.0;
  ring_radius = ring_fraction * std::min(height, width);
  max_center_distance = std::hypot(center_row, center_col);
}

void RewardConfig::validate() const {
  if (!(cht_threshold > 0.0 && cht_threshold < 1.0))
    throw std::invalid_argument("reward config: cht_threshold must lie in (0, 1)");
  if (!(expected_objects > 0.0)) throw std::invalid_argument("reward config: expected_objects must be > 0");
  if (!(theta > 0.0)) throw std::invalid_argument("reward config: theta must be > 0");
  if (!(cht_radius_range.first > 0.0) || cht_radius_range.second < cht_radius_range.first)
    throw std::invalid_argument("reward config: bad CHT radius range");
  if (!(box_long_tolerance > 0.0 && box_short_tolerance > 0.0 && box_angle_tolerance > 0.0))
    throw std::invalid_argument("reward config: box tolerances must be > 0");
  if (ring_radius > 0.0) {
    if (!(inner_scale() > 0.0 && outer_scale() > 0.0 && foreground_scale() > 0.0))
      throw std::invalid_argument("reward config: ring normalisers must be > 0");
  }
}

double RewardVector::mean() const {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& v : per_size) {
    for (double r : v) total += r;
    n += v.size();
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

std::size_t RewardVector::count() const {
  std::size_t n = 0;
  for (const auto& v : per_size) n += v.size();
  return n;
}

double gaussian_kernel(double u) { return std::exp(-0.5 * u * u); }

double r_exp(double r, double theta) { return std::exp(r * theta) / std::exp(theta); }

double circles_local_reward(double cht, const RewardConfig& cfg) {
  const double g = cfg.cht_threshold;
  if (cht < g) return 0.0;
  return sigmoid(((cht - g) / (1.0 - g) - 0.5) * 6.0) * 0.4;
}

double circles_global_reward(int predicted, const RewardConfig& cfg) {
  if (predicted >= cfg.expected_objects) return 0.5 * r_exp(cfg.expected_objects / predicted, cfg.theta);
  return 0.3;
}

double circles_object_reward(double cht, int predicted, const RewardConfig& cfg) {
  return clamp01(circles_local_reward(cht, cfg) + circles_global_reward(predicted, cfg));
}

double circles_background_reward(int predicted, const RewardConfig& cfg) {
  if (predicted <= cfg.expected_objects) return r_exp(predicted / cfg.expected_objects, cfg.theta);
  return 1.0;
}

double ring_edge_reward_at(double h, double action, double r_o1, double r_o2, const RewardConfig& cfg) {
  const double merge = 1.0 - action;
  const double j = cfg.ring_radius;
  const double r_bg = h <= j ? gaussian_kernel(h / cfg.inner_scale()) * merge
                             : gaussian_kernel((cfg.max_center_distance - h) / cfg.outer_scale()) * merge;
  const double r_fg = gaussian_kernel((h - j) / cfg.foreground_scale()) * std::max(r_o1, r_o2);
  return clamp01(r_fg + r_bg);
}

double ring_edge_reward(const imaging::ObjectStats& o1, const imaging::ObjectStats& o2, double action,
                        double r_o1, double r_o2, const RewardConfig& cfg) {
  const double d1 = std::hypot(o1.center_row - cfg.center_row, o1.center_col - cfg.center_col);
  const double d2 = std::hypot(o2.center_row - cfg.center_row, o2.center_col - cfg.center_col);
  return ring_edge_reward_at(0.5 * (d1 + d2), action, r_o1, r_o2, cfg);
}

double box_object_reward(const imaging::ObjectStats& stats, const RewardConfig& cfg) {
  const imaging::RotatedBox& b = stats.box;
  if (stats.mass < 2 || !(b.short_side > 0.0)) return 0.0;
  // Radial direction at the object center, folded to [0, pi) like the box orientation.
  double radial = std::atan2(b.center_row - cfg.center_row, b.center_col - cfg.center_col);
  radial = std::fmod(radial + std::numbers::pi, std::numbers::pi);
  double diff = std::abs(b.orientation - radial);
  diff = std::min(diff, std::numbers::pi - diff);
  const double sim = gaussian_kernel((b.long_side - cfg.box_long) / cfg.box_long_tolerance) *
                     gaussian_kernel((b.short_side - cfg.box_short) / cfg.box_short_tolerance) *
                     gaussian_kernel(diff / cfg.box_angle_tolerance);
  return r_exp(sim, cfg.theta);
}

double supervised_dice_reward(std::span<const double> actions, std::span<const double> gt_edges,
                              const rag::SubGraph& sub) {
  if (actions.size() != gt_edges.size())
    throw std::invalid_argument("supervised_dice_reward: " + std::to_string(actions.size()) +
                                " actions vs " + std::to_string(gt_edges.size()) + " labels");
  constexpr double eps = 1e-6;
  double inter = 0.0, sa = 0.0, sg = 0.0;
  for (int e : sub.edges) {
    if (e < 0 || static_cast<std::size_t>(e) >= actions.size())
      throw std::invalid_argument("supervised_dice_reward: edge index out of range");
    const double a = actions[static_cast<std::size_t>(e)], g = gt_edges[static_cast<std::size_t>(e)];
    inter += a * g;
    sa += a;
    sg += g;
  }
  return clamp01((2.0 * inter + eps) / (sa + sg + eps));
}

std::vector<double> subgraph_means(std::span<const double> edge_rewards,
                                   std::span<const rag::SubGraph> subgraphs) {
  std::vector<double> out;
  out.reserve(subgraphs.size());
  for (const rag::SubGraph& sg : subgraphs) {
    double total = 0.0;
    for (int e : sg.edges) total += edge_rewards[static_cast<std::size_t>(e)];
    out.push_back(sg.edges.empty() ? 0.0 : total / static_cast<double>(sg.edges.size()));
  }
  return out;
}

std::vector<double> decompose_rewards(std::span<const double> object_rewards,
                                      const partitioning::Partition& partition,
                                      const gnn::GraphTopology& topology,
                                      std::span<const rag::SubGraph> subgraphs) {
  if (static_cast<int>(partition.labels.size()) != topology.num_nodes)
    throw std::invalid_argument("decompose_rewards: partition does not cover the graph");
  std::vector<double> node_reward(partition.labels.size());
  for (std::size_t v = 0; v < partition.labels.size(); ++v) {
    const int obj = partition.labels[v];
    if (obj < 0 || static_cast<std::size_t>(obj) >= object_rewards.size())
      throw std::invalid_argument("decompose_rewards: superpixel " + std::to_string(v) +
                                  " maps to object " + std::to_string(obj) + " without a reward");
    node_reward[v] = object_rewards[static_cast<std::size_t>(obj)];
  }
  std::vector<double> edge_reward(topology.edges.size());
  for (std::size_t e = 0; e < topology.edges.size(); ++e) {
    auto [i, j] = topology.edges[e];
    edge_reward[e] = std::max(node_reward[static_cast<std::size_t>(i)], node_reward[static_cast<std::size_t>(j)]);
  }
  return subgraph_means(edge_reward, subgraphs);
}

CirclesObjects circles_object_rewards(const imaging::LabelMap& prediction, const RewardConfig& cfg) {
  const int n = imaging::num_labels(prediction);
  CirclesObjects out;
  out.rewards.assign(static_cast<std::size_t>(n), 0.0);
  if (n == 0) return out;
  std::vector<int> mass(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < prediction.size(); ++i) ++mass[static_cast<std::size_t>(prediction.data()[i])];
  out.background = static_cast<int>(std::max_element(mass.begin(), mass.end()) - mass.begin());
  out.predicted_foreground = n - 1;
  out.global_background = circles_background_reward(out.predicted_foreground, cfg);
  out.global_foreground = out.predicted_foreground > 0 ? circles_global_reward(out.predicted_foreground, cfg) : 0.0;
  for (int l = 0; l < n; ++l) {
    if (l == out.background) {
      out.rewards[static_cast<std::size_t>(l)] = out.global_background;
      continue;
    }
    const double cht = imaging::circle_hough_value(imaging::label_mask(prediction, l), cfg.cht_radius_range);
    out.rewards[static_cast<std::size_t>(l)] = circles_object_reward(cht, out.predicted_foreground, cfg);
  }
  return out;
}

std::vector<double> ring_edge_rewards(const imaging::LabelMap& prediction,
                                      const partitioning::Partition& partition,
                                      const gnn::GraphTopology& topology,
                                      std::span<const double> actions, const RewardConfig& cfg) {
  const auto stats = imaging::object_stats(prediction, false);
  std::vector<double> obj_reward(stats.size());
  for (std::size_t o = 0; o < stats.size(); ++o) obj_reward[o] = box_object_reward(stats[o], cfg);
  std::vector<double> out(topology.edges.size());
  for (std::size_t e = 0; e < topology.edges.size(); ++e) {
    auto [i, j] = topology.edges[e];
    const auto oi = static_cast<std::size_t>(partition.labels[static_cast<std::size_t>(i)]);
    const auto oj = static_cast<std::size_t>(partition.labels[static_cast<std::size_t>(j)]);
    out[e] = ring_edge_reward(stats[oi], stats[oj], actions[e], obj_reward[oi], obj_reward[oj], cfg);
  }
  return out;
}

std::vector<int> superpixel_majority(const imaging::LabelMap& superpixels, const imaging::LabelMap& truth) {
  if (superpixels.rows() != truth.rows() || superpixels.cols() != truth.cols())
    throw std::invalid_argument("superpixel_majority: shape mismatch");
  const int n = imaging::num_labels(superpixels);
  std::vector<std::map<int, int>> votes(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < superpixels.size(); ++i)
    ++votes[static_cast<std::size_t>(superpixels.data()[i])][truth.data()[i]];
  std::vector<int> out(static_cast<std::size_t>(n), 0);
  for (int s = 0; s < n; ++s) {
    int best = -1, best_count = -1;
    for (const auto& [label, count] : votes[static_cast<std::size_t>(s)]) {
      if (count > best_count) {
        best = label;
        best_count = count;
      }
    }
    out[static_cast<std::size_t>(s)] = best;
  }
  return out;
}

std::vector<double> ground_truth_edge_labels(const imaging::LabelMap& superpixels,
                                             const imaging::LabelMap& truth,
                                             const gnn::GraphTopology& topology) {
  const auto major = superpixel_majority(superpixels, truth);
  std::vector<double> out(topology.edges.size());
  for (std::size_t e = 0; e < topology.edges.size(); ++e) {
    auto [i, j] = topology.edges[e];
    out[e] = major[static_cast<std::size_t>(i)] == major[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
  }
  return out;
}

std::vector<SurfacePoint> circles_reward_surface(int cht_steps, int max_predicted, const RewardConfig& cfg) {
  if (cht_steps < 2 || max_predicted < 1) throw std::invalid_argument("reward surface: bad grid");
  std::vector<SurfacePoint> out;
  for (int n = 1; n <= max_predicted; ++n) {
    for (int s = 0; s < cht_steps; ++s) {
      const double c = static_cast<double>(s) / (cht_steps - 1);
      out.push_back({c, n, circles_object_reward(c, n, cfg)});
    }
  }
  return out;
}

}  // namespace priorseg::rewards
