#include "priorseg/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace priorseg::imaging {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kFillFactor = 0.9;

}  // namespace

ad::Matrix pool_node_features(const ad::Matrix& pixel_features, const LabelMap& superpixels) {
  if (pixel_features.rows() != superpixels.size())
    throw std::invalid_argument("pool_node_features: " + std::to_string(pixel_features.rows()) +
                                " feature rows for " + std::to_string(superpixels.size()) + " pixels");
  const int n = num_labels(superpixels);
  ad::Matrix out = ad::Matrix::Zero(n, pixel_features.cols());
  std::vector<int> count(static_cast<std::size_t>(n), 0);
  for (Eigen::Index p = 0; p < superpixels.size(); ++p) {
    const int l = superpixels.data()[p];
    if (l < 0) throw std::invalid_argument("pool_node_features: negative label");
    out.row(l) += pixel_features.row(p);
    ++count[static_cast<std::size_t>(l)];
  }
  for (int l = 0; l < n; ++l) {
    if (count[static_cast<std::size_t>(l)] == 0)
      throw std::invalid_argument("pool_node_features: superpixel " + std::to_string(l) +
                                  " is empty (labels not compacted)");
    out.row(l) /= count[static_cast<std::size_t>(l)];
  }
  return out;
}

ad::Matrix handcrafted_node_features(const LabelMap& superpixels) {
  const int n = num_labels(superpixels);
  const double h = static_cast<double>(superpixels.rows()), w = static_cast<double>(superpixels.cols());
  std::vector<double> sr(static_cast<std::size_t>(n), 0.0), sc(static_cast<std::size_t>(n), 0.0);
  std::vector<int> mass(static_cast<std::size_t>(n), 0);
  for (Eigen::Index r = 0; r < superpixels.rows(); ++r) {
    for (Eigen::Index c = 0; c < superpixels.cols(); ++c) {
      const auto l = static_cast<std::size_t>(superpixels(r, c));
      sr[l] += static_cast<double>(r);
      sc[l] += static_cast<double>(c);
      ++mass[l];
    }
  }
  const double cr = (h - 1.0) / 2.0, cc = (w - 1.0) / 2.0;
  const double half_diag = 0.5 * std::hypot(h, w);
  ad::Matrix f(n, 4);
  for (int l = 0; l < n; ++l) {
    const auto k = static_cast<std::size_t>(l);
    if (mass[k] == 0)
      throw std::invalid_argument("handcrafted_node_features: superpixel " + std::to_string(l) + " is empty");
    const double dy = sr[k] / mass[k] - cr;
    const double dx = sc[k] / mass[k] - cc;
    const double radius = std::hypot(dx, dy);
    const double angle = std::atan2(-dy, dx);
    f(l, 0) = radius / half_diag;
    f(l, 1) = radius > 0.0 ? std::sin(angle) : 0.0;
    f(l, 2) = radius > 0.0 ? std::cos(angle) : 0.0;
    f(l, 3) = mass[k] / (h * w);
  }
  return f;
}

std::vector<Pixel> boundary_pixels(const Mask& mask) {
  std::vector<Pixel> out;
  const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!mask(r, c)) continue;
      const bool edge = r == 0 || c == 0 || r == h - 1 || c == w - 1 || !mask(r - 1, c) ||
                        !mask(r + 1, c) || !mask(r, c - 1) || !mask(r, c + 1);
      if (edge) out.push_back({r, c});
    }
  }
  return out;
}

double circle_hough_value(const Mask& mask, std::pair<double, double> radius_range) {
  auto [rmin, rmax] = radius_range;
  if (!(rmin > 0.0) || rmax < rmin) throw std::invalid_argument("circle_hough_value: bad radius range");
  const std::vector<Pixel> boundary = boundary_pixels(mask);
  if (boundary.empty()) throw std::invalid_argument("circle_hough_value: empty mask");

  int rlo = boundary.front().row, rhi = rlo, clo = boundary.front().col, chi = clo;
  for (const Pixel& p : boundary) {
    rlo = std::min(rlo, p.row);
    rhi = std::max(rhi, p.row);
    clo = std::min(clo, p.col);
    chi = std::max(chi, p.col);
  }
  // Radius bins every half pixel; a vote lands in bin b when |d - r_b| < 0.5.
  const int bins = static_cast<int>(std::floor((rmax - rmin) / 0.5)) + 1;
  std::vector<int> acc(static_cast<std::size_t>(bins));
  double best = 0.0;
  for (int r2 = 2 * rlo; r2 <= 2 * rhi; ++r2) {
    for (int c2 = 2 * clo; c2 <= 2 * chi; ++c2) {
      const double cy = 0.5 * r2, cx = 0.5 * c2;
      std::fill(acc.begin(), acc.end(), 0);
      for (const Pixel& p : boundary) {
        const double d = std::hypot(p.row - cy, p.col - cx);
        const double pos = (d - rmin) / 0.5;  // bin coordinate
        const int b0 = static_cast<int>(std::floor(pos));
        for (int b = b0; b <= b0 + 1; ++b) {
          if (b < 0 || b >= bins) continue;
          if (std::abs(d - (rmin + 0.5 * b)) < 0.5) ++acc[static_cast<std::size_t>(b)];
        }
      }
      for (int b = 0; b < bins; ++b) {
        const double radius = rmin + 0.5 * b;
        best = std::max(best, acc[static_cast<std::size_t>(b)] / (2.0 * kPi * radius * kFillFactor));
      }
    }
  }
  return std::clamp(best, 0.0, 1.0);
}

RotatedBox fit_rotated_bbox(const Mask& mask) {
  std::vector<Eigen::Vector2d> pts;  // (x = col, y = row)
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (Eigen::Index c = 0; c < mask.cols(); ++c)
      if (mask(r, c)) pts.emplace_back(static_cast<double>(c), static_cast<double>(r));
  if (pts.empty()) throw std::invalid_argument("fit_rotated_bbox: empty mask");
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  RotatedBox box;
  box.center_row = mean.y();
  box.center_col = mean.x();
  if (pts.size() == 1) return box;

  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : pts) cov += (p - mean) * (p - mean).transpose();
  cov /= static_cast<double>(pts.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  const Eigen::Vector2d major = eig.eigenvectors().col(1);
  const Eigen::Vector2d minor = eig.eigenvectors().col(0);
  double lo_a = 1e300, hi_a = -1e300, lo_b = 1e300, hi_b = -1e300;
  for (const auto& p : pts) {
    const double a = (p - mean).dot(major), b = (p - mean).dot(minor);
    lo_a = std::min(lo_a, a);
    hi_a = std::max(hi_a, a);
    lo_b = std::min(lo_b, b);
    hi_b = std::max(hi_b, b);
  }
  // Pixel extents: a run of n pixels spans n - 1 between centers plus one pixel.
  box.long_side = hi_a - lo_a + 1.0;
  box.short_side = hi_b - lo_b + 1.0;
  if (box.short_side > box.long_side) std::swap(box.long_side, box.short_side);
  double angle = std::atan2(major.y(), major.x());
  angle = std::fmod(angle, kPi);
  if (angle < 0.0) angle += kPi;
  if (angle >= kPi - 1e-12) angle = 0.0;
  box.orientation = angle;
  return box;
}

Mask label_mask(const LabelMap& labels, int label) { return labels.array() == label; }

std::vector<ObjectStats> object_stats(const LabelMap& labels, bool with_cht,
                                      std::pair<double, double> radius_range) {
  const int n = num_labels(labels);
  std::vector<ObjectStats> out(static_cast<std::size_t>(n));
  for (int l = 0; l < n; ++l) {
    ObjectStats& s = out[static_cast<std::size_t>(l)];
    s.id = l;
    const Mask m = label_mask(labels, l);
    s.mass = static_cast<int>(m.count());
    if (s.mass == 0) continue;
    s.box = fit_rotated_bbox(m);
    s.center_row = s.box.center_row;
    s.center_col = s.box.center_col;
    s.boundary = boundary_pixels(m);
    if (with_cht) s.cht = circle_hough_value(m, radius_range);
  }
  return out;
}

}  // namespace priorseg::imaging
