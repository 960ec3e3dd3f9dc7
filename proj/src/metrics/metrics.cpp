#include "priorseg/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <climits>
#include <cmath>
#include <set>
#include <stdexcept>

namespace priorseg::metrics {
namespace {

std::atomic<std::int64_t> g_invocations{0};

void check_shapes(const imaging::LabelMap& a, const imaging::LabelMap& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(what) + ": shape " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
}

// H(first | second) from the joint table, in nats.
double conditional_entropy(const ContingencyTable& t, bool of_a_given_b) {
  if (t.total == 0) return 0.0;
  const double n = static_cast<double>(t.total);
  double h = 0.0;
  for (const auto& [key, count] : t.joint) {
    const double given = static_cast<double>(of_a_given_b ? t.b_counts.at(key.second) : t.a_counts.at(key.first));
    const double c = static_cast<double>(count);
    h -= c / n * std::log(c / given);
  }
  return std::max(h, 0.0);
}

// Mean over instances of `from` of the best Dice against instances of `to`.
double best_dice(const ContingencyTable& t, bool from_a) {
  const auto& from_counts = from_a ? t.a_counts : t.b_counts;
  const auto& to_counts = from_a ? t.b_counts : t.a_counts;
  std::map<int, double> best;
  for (const auto& [l, c] : from_counts)
    if (l != 0) best[l] = 0.0;
  if (best.empty()) return 0.0;
  for (const auto& [key, count] : t.joint) {
    const int f = from_a ? key.first : key.second;
    const int o = from_a ? key.second : key.first;
    if (f == 0 || o == 0) continue;
    const double d = 2.0 * static_cast<double>(count) /
                     static_cast<double>(from_counts.at(f) + to_counts.at(o));
    best[f] = std::max(best[f], d);
  }
  double total = 0.0;
  for (const auto& [l, d] : best) total += d;
  return total / static_cast<double>(best.size());
}

}  // namespace

ContingencyTable ContingencyTable::build(const imaging::LabelMap& a, const imaging::LabelMap& b, int skip_b_label) {
  check_shapes(a, b, "contingency table");
  ContingencyTable t;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const int la = a.data()[i], lb = b.data()[i];
    if (lb == skip_b_label) continue;
    ++t.joint[{la, lb}];
    ++t.a_counts[la];
    ++t.b_counts[lb];
    ++t.total;
  }
  return t;
}

VariationOfInformation variation_of_information(const imaging::LabelMap& pred, const imaging::LabelMap& gt,
                                                bool ignore_background) {
  ++g_invocations;
  const auto t = ContingencyTable::build(pred, gt, ignore_background ? 0 : INT_MIN);
  return {conditional_entropy(t, false), conditional_entropy(t, true)};
}

double symmetric_best_dice(const imaging::LabelMap& pred, const imaging::LabelMap& gt) {
  ++g_invocations;
  const auto t = ContingencyTable::build(pred, gt, INT_MIN);
  return std::min(best_dice(t, true), best_dice(t, false));
}

double recovered_fraction(const imaging::LabelMap& pred, const imaging::LabelMap& gt, double iou_threshold) {
  ++g_invocations;
  const auto t = ContingencyTable::build(pred, gt, INT_MIN);
  std::set<int> instances, recovered;
  for (const auto& [l, c] : t.b_counts)
    if (l != 0) instances.insert(l);
  if (instances.empty()) return 0.0;
  for (const auto& [key, count] : t.joint) {
    if (key.second == 0) continue;
    const double uni = static_cast<double>(t.a_counts.at(key.first) + t.b_counts.at(key.second) - count);
    if (static_cast<double>(count) / uni >= iou_threshold) recovered.insert(key.second);
  }
  return static_cast<double>(recovered.size()) / static_cast<double>(instances.size());
}

imaging::LabelMap to_instance_map(const imaging::LabelMap& segmentation) {
  std::map<int, std::int64_t> mass;
  for (Eigen::Index i = 0; i < segmentation.size(); ++i) ++mass[segmentation.data()[i]];
  if (mass.empty()) return segmentation;
  int background = mass.begin()->first;
  for (const auto& [l, m] : mass)
    if (m > mass[background]) background = l;
  std::map<int, int> remap;
  int next = 1;
  for (const auto& [l, m] : mass) remap[l] = l == background ? 0 : next++;
  imaging::LabelMap out(segmentation.rows(), segmentation.cols());
  for (Eigen::Index i = 0; i < segmentation.size(); ++i) out.data()[i] = remap[segmentation.data()[i]];
  return out;
}

imaging::LabelMap project_to_superpixels(const imaging::LabelMap& superpixels, const imaging::LabelMap& gt) {
  check_shapes(superpixels, gt, "project_to_superpixels");
  std::map<int, std::map<int, std::int64_t>> votes;
  for (Eigen::Index i = 0; i < gt.size(); ++i) ++votes[superpixels.data()[i]][gt.data()[i]];
  std::map<int, int> major;
  for (const auto& [s, v] : votes) {
    auto it = std::max_element(v.begin(), v.end(),
                               [](const auto& x, const auto& y) { return x.second < y.second; });
    major[s] = it->first;
  }
  imaging::LabelMap out(gt.rows(), gt.cols());
  for (Eigen::Index i = 0; i < gt.size(); ++i) out.data()[i] = major[superpixels.data()[i]];
  return out;
}

std::int64_t invocation_count() { return g_invocations.load(); }

}  // namespace priorseg::metrics
