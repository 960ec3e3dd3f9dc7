#include "priorseg/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <tuple>
#include <unordered_map>

namespace priorseg::imaging {
namespace {

constexpr int kDr[4] = {-1, 1, 0, 0};
constexpr int kDc[4] = {0, 0, -1, 1};

class UnionFind {
 public:
  explicit UnionFind(int n) : parent_(static_cast<std::size_t>(n)) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }
  int find(int x) {
    while (parent_[static_cast<std::size_t>(x)] != x) {
      auto& p = parent_[static_cast<std::size_t>(x)];
      p = parent_[static_cast<std::size_t>(p)];
      x = p;
    }
    return x;
  }
  // Attaches b's root under a's root; returns the surviving root.
  int unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[static_cast<std::size_t>(b)] = a;
    return a;
  }

 private:
  std::vector<int> parent_;
};

}  // namespace

LabelMap compact_labels(const LabelMap& labels) {
  std::unordered_map<std::int32_t, std::int32_t> remap;
  LabelMap out(labels.rows(), labels.cols());
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = remap.try_emplace(labels.data()[i], static_cast<std::int32_t>(remap.size()));
    out.data()[i] = it->second;
  }
  return out;
}

int num_labels(const LabelMap& labels) {
  return labels.size() == 0 ? 0 : static_cast<int>(labels.maxCoeff()) + 1;
}

LabelMap seeded_watershed(const Image& boundary_map, double sigma) {
  const Image map = sigma > 0.0 ? gaussian_smooth(boundary_map, sigma) : boundary_map;
  const int h = static_cast<int>(map.rows()), w = static_cast<int>(map.cols());
  LabelMap labels = LabelMap::Constant(h, w, -1);

  // Regional minima: 4-connected equal-valued plateaus without a lower neighbour.
  std::vector<char> visited(static_cast<std::size_t>(h * w), 0);
  int next_label = 0;
  for (int r0 = 0; r0 < h; ++r0) {
    for (int c0 = 0; c0 < w; ++c0) {
      if (visited[static_cast<std::size_t>(r0 * w + c0)]) continue;
      const double level = map(r0, c0);
      std::vector<int> plateau{r0 * w + c0};
      visited[static_cast<std::size_t>(r0 * w + c0)] = 1;
      bool minimum = true;
      for (std::size_t k = 0; k < plateau.size(); ++k) {
        const int r = plateau[k] / w, c = plateau[k] % w;
        for (int d = 0; d < 4; ++d) {
          const int rr = r + kDr[d], cc = c + kDc[d];
          if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
          const double v = map(rr, cc);
          if (v < level) minimum = false;
          if (v == level && !visited[static_cast<std::size_t>(rr * w + cc)]) {
            visited[static_cast<std::size_t>(rr * w + cc)] = 1;
            plateau.push_back(rr * w + cc);
          }
        }
      }
      if (minimum) {
        for (int p : plateau) labels.data()[p] = next_label;
        ++next_label;
      }
    }
  }

  // Priority flood; FIFO order among equal values via a sequence counter.
  using Entry = std::tuple<double, std::uint64_t, int, int>;  // value, seq, pixel, label
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  std::uint64_t seq = 0;
  auto push_neighbours = [&](int p, int label) {
    const int r = p / w, c = p % w;
    for (int d = 0; d < 4; ++d) {
      const int rr = r + kDr[d], cc = c + kDc[d];
      if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
      if (labels(rr, cc) < 0) heap.emplace(map(rr, cc), seq++, rr * w + cc, label);
    }
  };
  for (int p = 0; p < h * w; ++p)
    if (labels.data()[p] >= 0) push_neighbours(p, labels.data()[p]);
  while (!heap.empty()) {
    auto [v, s, p, label] = heap.top();
    heap.pop();
    if (labels.data()[p] >= 0) continue;
    labels.data()[p] = label;
    push_neighbours(p, label);
  }
  return compact_labels(labels);
}

LabelMap mutex_watershed(const GridAffinities& affinities, std::span<const RepulsiveEdge> repulsive) {
  const int h = static_cast<int>(affinities.right.rows());
  const int w = static_cast<int>(affinities.right.cols());
  if (affinities.down.rows() != h || affinities.down.cols() != w)
    throw std::invalid_argument("mutex_watershed: affinity maps differ in shape");
  struct Edge {
    double weight;
    int p, q;
    bool attractive;
  };
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(2 * h * w) + repulsive.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (c + 1 < w) edges.push_back({affinities.right(r, c), r * w + c, r * w + c + 1, true});
      if (r + 1 < h) edges.push_back({affinities.down(r, c), r * w + c, (r + 1) * w + c, true});
    }
  }
  for (const RepulsiveEdge& e : repulsive) {
    if (e.p < 0 || e.q < 0 || e.p >= h * w || e.q >= h * w)
      throw std::invalid_argument("mutex_watershed: repulsive edge out of range");
    edges.push_back({e.weight, e.p, e.q, false});
  }
  std::stable_sort(edges.begin(), edges.end(),
                   [](const Edge& a, const Edge& b) { return a.weight > b.weight; });

  UnionFind uf(h * w);
  std::vector<std::set<int>> mutex(static_cast<std::size_t>(h * w));
  for (const Edge& e : edges) {
    const int a = uf.find(e.p), b = uf.find(e.q);
    if (a == b) continue;
    auto& ma = mutex[static_cast<std::size_t>(a)];
    auto& mb = mutex[static_cast<std::size_t>(b)];
    if (e.attractive) {
      if (ma.count(b)) continue;
      const bool small_b = mb.size() <= ma.size();
      const int keep = small_b ? a : b, gone = small_b ? b : a;
      uf.unite(keep, gone);
      auto& kept = mutex[static_cast<std::size_t>(keep)];
      for (int x : mutex[static_cast<std::size_t>(gone)]) {
        auto& mx = mutex[static_cast<std::size_t>(x)];
        mx.erase(gone);
        mx.insert(keep);
        kept.insert(x);
      }
      mutex[static_cast<std::size_t>(gone)].clear();
    } else {
      ma.insert(b);
      mb.insert(a);
    }
  }
  LabelMap labels(h, w);
  for (int p = 0; p < h * w; ++p) labels.data()[p] = uf.find(p);
  return compact_labels(labels);
}

LabelMap merge_small_regions(const LabelMap& labels, const Image& boundary, int min_size) {
  LabelMap current = compact_labels(labels);
  const int h = static_cast<int>(current.rows()), w = static_cast<int>(current.cols());
  while (true) {
    const int n = num_labels(current);
    if (n <= 1) return current;
    std::vector<int> size(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < current.size(); ++i) ++size[static_cast<std::size_t>(current.data()[i])];
    int smallest = -1;
    for (int l = 0; l < n; ++l)
      if (size[static_cast<std::size_t>(l)] < min_size &&
          (smallest < 0 || size[static_cast<std::size_t>(l)] < size[static_cast<std::size_t>(smallest)]))
        smallest = l;
    if (smallest < 0) return current;
    // Mean boundary value over the shared pixel pairs with each neighbour.
    std::map<int, std::pair<double, int>> contact;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        if (current(r, c) != smallest) continue;
        for (int d = 0; d < 4; ++d) {
          const int rr = r + kDr[d], cc = c + kDc[d];
          if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
          const int other = current(rr, cc);
          if (other == smallest) continue;
          auto& [total, cnt] = contact[other];
          total += 0.5 * (boundary(r, c) + boundary(rr, cc));
          ++cnt;
        }
      }
    }
    if (contact.empty()) return current;
    int target = contact.begin()->first;
    double best = contact.begin()->second.first / contact.begin()->second.second;
    for (const auto& [other, tc] : contact) {
      const double m = tc.first / tc.second;
      if (m < best) {
        best = m;
        target = other;
      }
    }
    for (Eigen::Index i = 0; i < current.size(); ++i)
      if (current.data()[i] == smallest) current.data()[i] = target;
    current = compact_labels(current);
  }
}

LabelMap mws_superpixels(const Image& image, const SuperpixelParams& params) {
  const Image grad = gaussian_gradient(image, params.sigma);
  const int h = static_cast<int>(image.rows()), w = static_cast<int>(image.cols());
  GridAffinities aff{Image::Zero(h, w), Image::Zero(h, w)};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (c + 1 < w) aff.right(r, c) = 1.0 - std::max(grad(r, c), grad(r, c + 1));
      if (r + 1 < h) aff.down(r, c) = 1.0 - std::max(grad(r, c), grad(r + 1, c));
    }
  }
  const int stride = std::max(1, params.stride);
  std::vector<RepulsiveEdge> rep;
  for (int off : params.offsets) {
    for (int r = 0; r < h; r += stride) {
      for (int c = 0; c < w; c += stride) {
        for (int dir = 0; dir < 2; ++dir) {
          const int rr = dir == 0 ? r : r + off;
          const int cc = dir == 0 ? c + off : c;
          if (rr >= h || cc >= w) continue;
          double peak = 0.0;
          for (int k = 0; k <= off; ++k)
            peak = std::max(peak, dir == 0 ? grad(r, c + k) : grad(r + k, c));
          rep.push_back({r * w + c, rr * w + cc, peak + params.repulsive_bias});
        }
      }
    }
  }
  LabelMap labels = mutex_watershed(aff, rep);
  return merge_small_regions(labels, grad, params.min_size);
}

}  // namespace priorseg::imaging
