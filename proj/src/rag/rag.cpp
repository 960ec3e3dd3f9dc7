#include "priorseg/rag.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace priorseg::rag {

std::vector<std::pair<int, int>> adjacent_label_pairs(const imaging::LabelMap& superpixels) {
  std::set<std::pair<int, int>> pairs;
  const Eigen::Index h = superpixels.rows(), w = superpixels.cols();
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < w; ++c) {
      const int a = superpixels(r, c);
      if (c + 1 < w) {
        const int b = superpixels(r, c + 1);
        if (a != b) pairs.emplace(std::min(a, b), std::max(a, b));
      }
      if (r + 1 < h) {
        const int b = superpixels(r + 1, c);
        if (a != b) pairs.emplace(std::min(a, b), std::max(a, b));
      }
    }
  }
  return {pairs.begin(), pairs.end()};
}

Rag build_rag(const imaging::LabelMap& superpixels, ad::Matrix node_features) {
  const int n = imaging::num_labels(superpixels);
  if (node_features.rows() != n)
    throw std::invalid_argument("build_rag: " + std::to_string(node_features.rows()) +
                                " feature rows for " + std::to_string(n) + " superpixels");
  Rag rag;
  rag.topology = gnn::GraphTopology::from_edges(n, adjacent_label_pairs(superpixels));
  rag.features = std::move(node_features);
  rag.mass.assign(static_cast<std::size_t>(n), 0);
  rag.centers.assign(static_cast<std::size_t>(n), Eigen::Vector2d::Zero());
  for (Eigen::Index r = 0; r < superpixels.rows(); ++r) {
    for (Eigen::Index c = 0; c < superpixels.cols(); ++c) {
      const auto l = static_cast<std::size_t>(superpixels(r, c));
      ++rag.mass[l];
      rag.centers[l] += Eigen::Vector2d(static_cast<double>(r), static_cast<double>(c));
    }
  }
  for (std::size_t l = 0; l < rag.centers.size(); ++l) {
    if (rag.mass[l] == 0) throw std::invalid_argument("build_rag: labels are not compacted");
    rag.centers[l] /= rag.mass[l];
  }
  rag.superpixels = std::make_shared<const imaging::LabelMap>(superpixels);
  return rag;
}

void SubgraphSchedule::validate() const {
  if (sizes.empty()) throw std::invalid_argument("subgraph size list must not be empty");
  for (int s : sizes)
    if (s < 1) throw std::invalid_argument("subgraph sizes must be positive");
}

std::vector<int> SubgraphSchedule::effective(int num_edges) const {
  std::vector<int> out;
  for (int s : sizes)
    if (s <= num_edges) out.push_back(s);
  return out;
}

}  // namespace priorseg::rag
