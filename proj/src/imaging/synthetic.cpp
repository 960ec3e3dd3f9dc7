#include "priorseg/imaging.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace priorseg::imaging {
namespace {

constexpr double kPi = std::numbers::pi;

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

struct Disk {
  double row, col, radius;
  double a2, p2, a3, p3;  // boundary harmonics

  double radius_at(double phi) const {
    return radius * (1.0 + a2 * std::sin(2.0 * phi + p2) + a3 * std::sin(3.0 * phi + p3));
  }
  double max_radius() const { return radius * (1.0 + a2 + a3); }
};

}  // namespace

std::vector<Sample> generate_circles(int count, int size, std::pair<int, int> circles_per_image,
                                     std::uint64_t seed, const CircleStyle& style) {
  if (size < 32) throw std::invalid_argument("generate_circles: size must be >= 32");
  if (count < 0) throw std::invalid_argument("generate_circles: negative count");
  auto [lo, hi] = circles_per_image;
  if (lo < 0 || hi < lo) throw std::invalid_argument("generate_circles: bad circle count range");
  if (2.0 * style.max_radius * (1.0 + 2.0 * style.radius_jitter) + 2.0 > size)
    throw std::invalid_argument("generate_circles: radius does not fit the image");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));

  for (int n = 0; n < count; ++n) {
    const int circles = std::uniform_int_distribution<int>(lo, hi)(rng);
    std::vector<Disk> disks;
    for (int c = 0; c < circles; ++c) {
      bool placed = false;
      for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
        Disk d{};
        d.radius = style.min_radius + (style.max_radius - style.min_radius) * unit(rng);
        d.a2 = style.radius_jitter * unit(rng);
        d.p2 = 2.0 * kPi * unit(rng);
        d.a3 = style.radius_jitter * unit(rng);
        d.p3 = 2.0 * kPi * unit(rng);
        const double reach = d.max_radius() + 1.0;
        d.row = reach + (size - 1 - 2.0 * reach) * unit(rng);
        d.col = reach + (size - 1 - 2.0 * reach) * unit(rng);
        placed = true;
        for (const Disk& o : disks) {
          const double dist = std::hypot(d.row - o.row, d.col - o.col);
          if (dist < d.max_radius() + o.max_radius() + style.gap) {
            placed = false;
            break;
          }
        }
        if (placed) disks.push_back(d);
      }
      if (!placed)
        throw std::runtime_error("generate_circles: could not place " + std::to_string(circles) +
                                 " disks in a " + std::to_string(size) + " image");
    }

    const double theta = kPi * unit(rng);
    const double period = 6.0 + 6.0 * unit(rng);
    const double phase = 2.0 * kPi * unit(rng);
    const double tex_period = 2.5 + 1.0 * unit(rng);

    Sample s;
    s.image.resize(size, size);
    s.truth = LabelMap::Zero(size, size);
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        int label = 0;
        for (std::size_t k = 0; k < disks.size(); ++k) {
          const Disk& d = disks[k];
          const double dr = r - d.row, dc = c - d.col;
          if (std::hypot(dr, dc) <= d.radius_at(std::atan2(dr, dc))) label = static_cast<int>(k) + 1;
        }
        double v;
        if (label == 0) {
          const double u = c * std::cos(theta) + r * std::sin(theta);
          v = style.background_level + style.stripe_amplitude * std::sin(2.0 * kPi * u / period + phase);
        } else {
          v = style.disk_level + style.disk_texture * std::sin(2.0 * kPi * c / tex_period) *
                                     std::sin(2.0 * kPi * r / tex_period);
        }
        v += style.noise * gauss(rng);
        s.truth(r, c) = label;
        s.image(r, c) = quantize(v);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> generate_ellipse_ring(int count, int size, int cells, std::uint64_t seed,
                                          double ring_fraction) {
  if (cells < 3) throw std::invalid_argument("generate_ellipse_ring: need at least 3 cells");
  if (size < 32) throw std::invalid_argument("generate_ellipse_ring: size must be >= 32");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double ring = ring_fraction * size;
  const double half_width = 0.22 * ring;
  const double center = (size - 1) / 2.0;
  const double sector = 2.0 * kPi / cells;

  std::vector<Sample> out;
  for (int n = 0; n < count; ++n) {
    const double rotation = sector * unit(rng);
    std::vector<double> bounds(static_cast<std::size_t>(cells) + 1);
    for (int k = 0; k < cells; ++k)
      bounds[static_cast<std::size_t>(k)] = rotation + sector * (k + 0.3 * (unit(rng) - 0.5));
    bounds.back() = bounds.front() + 2.0 * kPi;

    Sample s;
    s.image.resize(size, size);
    s.truth = LabelMap::Zero(size, size);
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        const double dr = r - center, dc = c - center;
        const double rho = std::hypot(dr, dc);
        double phi = std::atan2(dr, dc);
        while (phi < bounds.front()) phi += 2.0 * kPi;
        while (phi >= bounds.back()) phi -= 2.0 * kPi;
        int cell = 0;
        while (cell + 1 < cells && phi >= bounds[static_cast<std::size_t>(cell) + 1]) ++cell;
        double v = 0.1;
        if (std::abs(rho - ring) <= half_width) {
          s.truth(r, c) = cell + 1;
          const double to_side = std::min(phi - bounds[static_cast<std::size_t>(cell)],
                                          bounds[static_cast<std::size_t>(cell) + 1] - phi) * rho;
          const double to_band = half_width - std::abs(rho - ring);
          v = (std::min(to_side, to_band) < 1.0) ? 0.9 : 0.35;
        } else if (std::abs(rho - ring) <= half_width + 1.0) {
          v = 0.9;
        }
        s.image(r, c) = quantize(v + 0.03 * gauss(rng));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace priorseg::imaging
