#include "priorseg/imaging.hpp"

#include <cmath>
#include <stdexcept>

namespace priorseg::imaging {
namespace {

enum class Axis { Rows, Cols };

// out(r, c) = sum_k w[k] * img(r, c + k - R) along the chosen axis, mirrored borders.
Image correlate(const Image& img, const std::vector<double>& w, Axis axis) {
  const int h = static_cast<int>(img.rows()), wd = static_cast<int>(img.cols());
  const int radius = static_cast<int>(w.size() / 2);
  Image out(h, wd);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < wd; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const double weight = w[static_cast<std::size_t>(k + radius)];
        acc += axis == Axis::Cols ? weight * img(r, reflect_index(c + k, wd))
                                  : weight * img(reflect_index(r + k, h), c);
      }
      out(r, c) = acc;
    }
  }
  return out;
}

}  // namespace

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int x = -radius; x <= radius; ++x) {
    const double v = std::exp(-0.5 * x * x / (sigma * sigma));
    k[static_cast<std::size_t>(x + radius)] = v;
    total += v;
  }
  for (double& v : k) v /= total;
  return k;
}

std::vector<double> gaussian_derivative_kernel(double sigma) {
  std::vector<double> k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  for (int x = -radius; x <= radius; ++x) k[static_cast<std::size_t>(x + radius)] *= -x / (sigma * sigma);
  return k;
}

Image gaussian_smooth(const Image& img, double sigma) {
  const auto g = gaussian_kernel(sigma);
  return correlate(correlate(img, g, Axis::Rows), g, Axis::Cols);
}

Image gaussian_gradient(const Image& img, double sigma) {
  const auto g = gaussian_kernel(sigma);
  const auto dg = gaussian_derivative_kernel(sigma);
  const Image gx = correlate(correlate(img, g, Axis::Rows), dg, Axis::Cols);
  const Image gy = correlate(correlate(img, dg, Axis::Rows), g, Axis::Cols);
  Image mag = (gx.array().square() + gy.array().square()).sqrt().matrix();
  const double peak = mag.maxCoeff();
  // Constant images give round-off level responses; treat those as flat.
  if (peak <= 1e-12) return Image::Zero(img.rows(), img.cols());
  return mag / peak;
}

}  // namespace priorseg::imaging
