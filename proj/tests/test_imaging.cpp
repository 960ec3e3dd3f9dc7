#include "priorseg/imaging.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <queue>
#include <random>
#include <set>

using namespace priorseg;
using imaging::Image;
using imaging::LabelMap;

namespace {

int distinct(const LabelMap& m) { return static_cast<int>(std::set<int>(m.data(), m.data() + m.size()).size()); }

// Every label forms one 4-connected component.
bool regions_connected(const LabelMap& m) {
  const int h = static_cast<int>(m.rows()), w = static_cast<int>(m.cols());
  std::vector<char> seen(static_cast<std::size_t>(h * w), 0);
  std::set<int> started;
  for (int p = 0; p < h * w; ++p) {
    if (seen[static_cast<std::size_t>(p)]) continue;
    const int label = m.data()[p];
    if (!started.insert(label).second) return false;
    std::queue<int> q;
    q.push(p);
    seen[static_cast<std::size_t>(p)] = 1;
    while (!q.empty()) {
      const int cur = q.front();
      q.pop();
      const int r = cur / w, c = cur % w;
      const int nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (auto& n : nb) {
        if (n[0] < 0 || n[1] < 0 || n[0] >= h || n[1] >= w) continue;
        const int k = n[0] * w + n[1];
        if (!seen[static_cast<std::size_t>(k)] && m.data()[k] == label) {
          seen[static_cast<std::size_t>(k)] = 1;
          q.push(k);
        }
      }
    }
  }
  return true;
}

// Same partition up to label names.
bool same_partition(const LabelMap& a, const LabelMap& b) {
  std::map<int, int> ab, ba;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    auto [i, fresh_a] = ab.emplace(a.data()[k], b.data()[k]);
    auto [j, fresh_b] = ba.emplace(b.data()[k], a.data()[k]);
    if (i->second != b.data()[k] || j->second != a.data()[k]) return false;
  }
  return true;
}

// Straightforward mutex watershed: all edges in descending weight order,
// clusters as label arrays, mutexes as a set of cluster pairs.
LabelMap mutex_oracle(const imaging::GridAffinities& aff, const std::vector<imaging::RepulsiveEdge>& rep, int h,
                      int w) {
  struct E {
    double wgt;
    int p, q;
    bool attractive;
  };
  std::vector<E> edges;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (c + 1 < w) edges.push_back({aff.right(r, c), r * w + c, r * w + c + 1, true});
      if (r + 1 < h) edges.push_back({aff.down(r, c), r * w + c, (r + 1) * w + c, true});
    }
  for (const auto& e : rep) edges.push_back({e.weight, e.p, e.q, false});
  std::sort(edges.begin(), edges.end(), [](const E& x, const E& y) { return x.wgt > y.wgt; });
  std::vector<int> label(static_cast<std::size_t>(h * w));
  for (int i = 0; i < h * w; ++i) label[static_cast<std::size_t>(i)] = i;
  std::set<std::pair<int, int>> mutex;
  for (const E& e : edges) {
    const int a = label[static_cast<std::size_t>(e.p)], b = label[static_cast<std::size_t>(e.q)];
    if (a == b) continue;
    const auto key = std::minmax(a, b);
    if (!e.attractive) {
      mutex.insert(key);
      continue;
    }
    if (mutex.count(key)) continue;
    for (int& l : label)
      if (l == b) l = a;
    std::set<std::pair<int, int>> next;
    for (auto [x, y] : mutex) {
      if (x == b) x = a;
      if (y == b) y = a;
      next.insert(std::minmax(x, y));
    }
    mutex = next;
  }
  LabelMap out(h, w);
  for (int i = 0; i < h * w; ++i) out.data()[i] = label[static_cast<std::size_t>(i)];
  return out;
}

}  // namespace

TEST_CASE("circle generator") {
  SUBCASE("no disks means empty ground truth") {
    const auto s = imaging::generate_circles(1, 32, {0, 0}, 3);
    CHECK(s[0].truth.isZero());
  }
  SUBCASE("n disks give n + 1 labels") {
    const auto s = imaging::generate_circles(3, 64, {5, 5}, 4);
    for (const auto& x : s) CHECK(distinct(x.truth) == 6);
  }
  SUBCASE("deterministic and quantised to 8 bits") {
    const auto a = imaging::generate_circles(2, 48, {2, 3}, 9);
    const auto b = imaging::generate_circles(2, 48, {2, 3}, 9);
    CHECK(a[1].image == b[1].image);
    CHECK(a[1].truth == b[1].truth);
    CHECK(((a[0].image * 255.0).array().round() - a[0].image.array() * 255.0).abs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("ring generator") {
  const int size = 64;
  const auto s = imaging::generate_ellipse_ring(2, size, 8, 5, 0.3);
  CHECK(distinct(s[0].truth) == 9);
  CHECK(s[0].image == imaging::generate_ellipse_ring(2, size, 8, 5, 0.3)[0].image);
  const double j = 0.3 * size, c = (size - 1) / 2.0;
  for (const auto& st : imaging::object_stats(imaging::compact_labels(s[0].truth), false)) {
    const double d = std::hypot(st.center_row - c, st.center_col - c);
    if (d < 2.0) continue;  // background has its mass spread around the center
    CHECK(std::abs(d - j) <= 0.15 * j);
  }
}

TEST_CASE("gaussian gradient") {
  SUBCASE("constant image") { CHECK(imaging::gaussian_gradient(Image::Constant(10, 12, 0.4), 1.0).isZero()); }
  SUBCASE("vertical step peaks at the step") {
    Image img = Image::Zero(16, 16);
    img.rightCols(8).setOnes();
    const Image g = imaging::gaussian_gradient(img, 1.0);
    for (int r = 0; r < 16; ++r) {
      Eigen::Index col;
      g.row(r).maxCoeff(&col);
      CHECK((col == 7 || col == 8));
    }
  }
  SUBCASE("single pixel matches a dense 2-D convolution") {
    const int n = 21;
    Image img = Image::Zero(n, n);
    img(9, 11) = 1.0;
    const auto g = imaging::gaussian_kernel(1.0);
    const auto dg = imaging::gaussian_derivative_kernel(1.0);
    const int rad = static_cast<int>(g.size() / 2);
    Image mag(n, n);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        double gx = 0, gy = 0;
        for (int a = -rad; a <= rad; ++a)
          for (int b = -rad; b <= rad; ++b) {
            const double v = img(imaging::reflect_index(r + a, n), imaging::reflect_index(c + b, n));
            gx += g[static_cast<std::size_t>(a + rad)] * dg[static_cast<std::size_t>(b + rad)] * v;
            gy += dg[static_cast<std::size_t>(a + rad)] * g[static_cast<std::size_t>(b + rad)] * v;
          }
        mag(r, c) = std::hypot(gx, gy);
      }
    mag /= mag.maxCoeff();
    CHECK((imaging::gaussian_gradient(img, 1.0) - mag).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("seeded watershed") {
  SUBCASE("constant map is one region") {
    CHECK(distinct(imaging::seeded_watershed(Image::Constant(8, 8, 0.3), 1.0)) == 1);
  }
  SUBCASE("two basins split on the ridge") {
    Image m(9, 15);
    for (int r = 0; r < 9; ++r)
      for (int c = 0; c < 15; ++c) m(r, c) = 1.0 - std::abs(c - 7) / 7.0;
    const LabelMap l = imaging::seeded_watershed(m, 0.5);
    CHECK(distinct(l) == 2);
    for (int r = 0; r < 9; ++r) {
      CHECK(l(r, 0) != l(r, 14));
      for (int c = 0; c < 7; ++c) CHECK(l(r, c) == l(r, 0));
      for (int c = 8; c < 15; ++c) CHECK(l(r, c) == l(r, 14));
    }
  }
  SUBCASE("random map gives connected regions covering every pixel") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 10; ++trial) {
      Image m(16, 16);
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
      const LabelMap l = imaging::seeded_watershed(m, 1.0);
      CHECK(l.minCoeff() >= 0);
      CHECK(regions_connected(l));
    }
  }
}

TEST_CASE("mutex watershed") {
  const int h = 4, w = 4;
  imaging::GridAffinities aff{Image::Constant(h, w, 0.9), Image::Constant(h, w, 0.8)};
  SUBCASE("without repulsion everything merges") {
    CHECK(distinct(imaging::mutex_watershed(aff, {})) == 1);
  }
  SUBCASE("a dominant repulsive edge separates its pixels") {
    const std::vector<imaging::RepulsiveEdge> rep{{0, 15, 2.0}};
    const LabelMap l = imaging::mutex_watershed(aff, rep);
    CHECK(l(0, 0) != l(3, 3));
  }
  SUBCASE("random weights match the reference agglomeration") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 25; ++trial) {
      imaging::GridAffinities a{Image(h, w), Image(h, w)};
      for (Eigen::Index k = 0; k < a.right.size(); ++k) {
        a.right.data()[k] = u(rng);
        a.down.data()[k] = u(rng);
      }
      std::vector<imaging::RepulsiveEdge> rep;
      for (int k = 0; k < 8; ++k) {
        const int p = static_cast<int>(u(rng) * 16), q = static_cast<int>(u(rng) * 16);
        if (p != q) rep.push_back({p, q, u(rng)});
      }
      CHECK(same_partition(imaging::mutex_watershed(a, rep), mutex_oracle(a, rep, h, w)));
    }
  }
}

TEST_CASE("superpixels on generated images") {
  const auto s = imaging::generate_circles(2, 64, {3, 5}, 7);
  for (const auto& x : s) {
    const LabelMap sp = imaging::mws_superpixels(x.image);
    CHECK(sp.minCoeff() == 0);
    CHECK(sp.maxCoeff() == imaging::num_labels(sp) - 1);
    CHECK(imaging::num_labels(sp) > 10);
    CHECK(regions_connected(sp));
  }
}

TEST_CASE("node feature pooling") {
  LabelMap sp(2, 4);
  sp << 0, 0, 1, 1, 0, 0, 1, 1;
  SUBCASE("constant features") {
    const ad::Matrix f = imaging::pool_node_features(ad::Matrix::Constant(8, 3, 0.25), sp);
    CHECK(f.row(0) == f.row(1));
  }
  SUBCASE("single superpixel gives the global mean") {
    ad::Matrix px(8, 1);
    px << 1, 2, 3, 4, 5, 6, 7, 8;
    CHECK(imaging::pool_node_features(px, LabelMap::Zero(2, 4))(0, 0) == doctest::Approx(4.5));
  }
  SUBCASE("two regions with values 0 and 1") {
    ad::Matrix px(8, 1);
    px << 0, 0, 1, 1, 0, 0, 1, 1;
    const ad::Matrix f = imaging::pool_node_features(px, sp);
    CHECK(f(0, 0) == 0.0);
    CHECK(f(1, 0) == 1.0);
  }
  SUBCASE("non-contiguous labels are rejected") {
    LabelMap bad = sp;
    bad(0, 0) = 5;
    CHECK_THROWS(imaging::pool_node_features(ad::Matrix::Zero(8, 1), bad));
  }
}

TEST_CASE("handcrafted node features") {
  const int n = 64;
  LabelMap sp = LabelMap::Zero(n, n);
  sp(31, 31) = 1;
  sp(31, 32) = 1;
  sp(32, 31) = 1;
  sp(32, 32) = 1;
  sp(31, 63) = 2;
  sp(32, 63) = 2;
  const ad::Matrix f = imaging::handcrafted_node_features(sp);
  CHECK(f(1, 0) == doctest::Approx(0.0));
  const double half_diag = 0.5 * std::hypot(n, n);
  CHECK(f(2, 0) == doctest::Approx(31.5 / half_diag));
  CHECK(f(2, 0) == doctest::Approx(std::numbers::sqrt2 / 2).epsilon(0.03));
  CHECK(f(2, 1) == doctest::Approx(0.0));
  CHECK(f(2, 2) == doctest::Approx(1.0));
  CHECK(f.col(3).sum() == doctest::Approx(1.0));
}

TEST_CASE("circle hough value") {
  auto disk = [](int size, double cr, double cc, double rad) {
    imaging::Mask m = imaging::Mask::Constant(size, size, false);
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) m(r, c) = std::hypot(r - cr, c - cc) <= rad;
    return m;
  };
  const double disk_value = imaging::circle_hough_value(disk(32, 15.5, 15.5, 10), {4, 16});
  CHECK(disk_value >= 0.9);
  imaging::Mask rect = imaging::Mask::Constant(32, 32, false);
  rect.block(14, 6, 3, 20).setConstant(true);
  CHECK(imaging::circle_hough_value(rect, {4, 16}) <= 0.5);
  imaging::Mask square = imaging::Mask::Constant(32, 32, false);
  square.block(6, 6, 20, 20).setConstant(true);
  CHECK(disk_value > imaging::circle_hough_value(square, {4, 16}));
}

TEST_CASE("rotated box") {
  imaging::Mask m = imaging::Mask::Constant(20, 20, false);
  m.block(8, 5, 4, 10).setConstant(true);
  auto box = imaging::fit_rotated_bbox(m);
  CHECK(box.long_side == doctest::Approx(10).epsilon(0.05));
  CHECK(box.short_side == doctest::Approx(4).epsilon(0.05));
  CHECK(std::min(box.orientation, std::numbers::pi - box.orientation) == doctest::Approx(0.0));
  imaging::Mask t = m.transpose();
  box = imaging::fit_rotated_bbox(t);
  CHECK(box.long_side == doctest::Approx(10).epsilon(0.05));
  CHECK(box.orientation == doctest::Approx(std::numbers::pi / 2));
  imaging::Mask d = imaging::Mask::Constant(30, 30, false);
  for (int r = 0; r < 30; ++r)
    for (int c = 0; c < 30; ++c) d(r, c) = std::hypot(r - 14.5, c - 14.5) <= 9;
  box = imaging::fit_rotated_bbox(d);
  CHECK(box.long_side / box.short_side < 1.1);
}

TEST_CASE("file formats round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "priorseg_io_test";
  std::filesystem::create_directories(dir);
  const auto s = imaging::generate_circles(1, 40, {2, 3}, 1);
  imaging::write_pgm((dir / "a.pgm").string(), s[0].image);
  CHECK(imaging::read_pgm((dir / "a.pgm").string()) == s[0].image);
  LabelMap l = s[0].truth;
  l(0, 0) = -7;
  imaging::write_labels((dir / "a.lbl").string(), l);
  CHECK(imaging::read_labels((dir / "a.lbl").string()) == l);
  ad::Matrix f = ad::Matrix::Random(5, 3);
  imaging::write_features((dir / "a.fea").string(), f);
  CHECK(imaging::read_features((dir / "a.fea").string()) == f);
  CHECK_THROWS(imaging::read_labels((dir / "a.pgm").string()));
  std::filesystem::remove_all(dir);
}
