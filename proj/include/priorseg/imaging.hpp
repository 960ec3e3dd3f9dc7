#pragma once

// Synthetic data, superpixel extraction, feature pooling and object shape
// measurements on single-channel 2-D images.

#include "priorseg/autodiff.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace priorseg::imaging {

using Image = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using LabelMap = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Sample {
  Image image;
  LabelMap truth;  ///< 0 = background, 1..n = instances
};

struct Pixel {
  int row = 0;
  int col = 0;
};

// --- synthetic data ------------------------------------------------------------

struct CircleStyle {
  double min_radius = 6.0;
  double max_radius = 9.0;
  double gap = 4.0;               ///< minimum rim-to-rim distance between disks
  double radius_jitter = 0.06;    ///< relative amplitude of boundary perturbation
  double background_level = 0.35;
  double stripe_amplitude = 0.15;
  double disk_level = 0.72;
  double disk_texture = 0.07;
  double noise = 0.03;
};

/// Irregular textured disks on an oriented-stripe background. Intensities are
/// quantised to multiples of 1/255 so they survive 8-bit storage unchanged.
/// Throws std::runtime_error if the disks cannot be placed without overlap.
std::vector<Sample> generate_circles(int count, int size, std::pair<int, int> circles_per_image,
                                     std::uint64_t seed, const CircleStyle& style = {});

/// Annular sectors ("cells") on a ring of radius ring_fraction * size around
/// the image center, separated by bright ridges. Labels 1..cells.
std::vector<Sample> generate_ellipse_ring(int count, int size, int cells, std::uint64_t seed,
                                          double ring_fraction = 0.3);

// --- filters ---------------------------------------------------------------------

/// Normalised sampled Gaussian and its derivative, radius ceil(4 sigma).
std::vector<double> gaussian_kernel(double sigma);
std::vector<double> gaussian_derivative_kernel(double sigma);

/// Mirror index into [0, n) ("d c b a | a b c d").
int reflect_index(int i, int n);

Image gaussian_smooth(const Image& img, double sigma);

/// Magnitude of the Gaussian-derivative gradient rescaled so its maximum is 1
/// (all zeros for a constant image).
Image gaussian_gradient(const Image& img, double sigma);

// --- superpixels -------------------------------------------------------------------

/// Relabels to 0..L-1 in order of first appearance (row-major scan).
LabelMap compact_labels(const LabelMap& labels);
int num_labels(const LabelMap& labels);

/// Seeds at regional minima of the smoothed map (plateaus form one seed),
/// priority-flood by ascending value with FIFO tie-breaking.
LabelMap seeded_watershed(const Image& boundary_map, double sigma);

/// Attractive weights for the 4-neighbour grid: right(r, c) joins (r, c)-(r, c+1)
/// and down(r, c) joins (r, c)-(r+1, c). Unused trailing entries are ignored.
struct GridAffinities {
  Image right;
  Image down;
};

/// Long-range repulsive edge between flat pixel indices p and q.
struct RepulsiveEdge {
  int p = 0;
  int q = 0;
  double weight = 0.0;
};

/// Kruskal-style descending sweep with union-find and mutex constraints.
LabelMap mutex_watershed(const GridAffinities& affinities, std::span<const RepulsiveEdge> repulsive);

struct SuperpixelParams {
  double sigma = 0.7;                  ///< Gaussian gradient scale
  std::vector<int> offsets{3, 9};      ///< repulsive edge lengths (horizontal and vertical)
  int stride = 2;                      ///< repulsive edges start every stride-th pixel
  double repulsive_bias = 0.6;         ///< added to repulsive weights
  int min_size = 12;                   ///< regions below this are merged into a neighbour
};

/// Mutex watershed on the Gaussian gradient image: attractive weights
/// 1 - max(g_p, g_q), repulsive weights max g along the connecting segment.
LabelMap mws_superpixels(const Image& image, const SuperpixelParams& params = {});

/// Merges regions smaller than min_size into the adjacent region sharing the
/// lowest mean boundary value; result compacted.
LabelMap merge_small_regions(const LabelMap& labels, const Image& boundary, int min_size);

// --- node features --------------------------------------------------------------

/// pixel_features is (H*W x C) in row-major pixel order. Row i of the result is
/// the mean over superpixel i. Throws on labels that are not 0..L-1 contiguous.
ad::Matrix pool_node_features(const ad::Matrix& pixel_features, const LabelMap& superpixels);

/// Per node: (radius / half-diagonal, sin angle, cos angle, mass / area) of the
/// center of mass relative to the image center.
ad::Matrix handcrafted_node_features(const LabelMap& superpixels);

// --- shape measurements -----------------------------------------------------------

/// Mask pixels with a 4-neighbour outside the mask or the image.
std::vector<Pixel> boundary_pixels(const Mask& mask);

/// Circle Hough value in [0, 1]: the best (center, radius) accumulator over
/// half-pixel centers and half-pixel radii, divided by 2*pi*r*0.9.
double circle_hough_value(const Mask& mask, std::pair<double, double> radius_range);

struct RotatedBox {
  double center_row = 0.0;
  double center_col = 0.0;
  double long_side = 0.0;
  double short_side = 0.0;
  double orientation = 0.0;  ///< angle of the long side vs the column axis, in [0, pi)
};

/// Principal-axes box of the pixel coordinates.
RotatedBox fit_rotated_bbox(const Mask& mask);

struct ObjectStats {
  int id = 0;
  int mass = 0;
  double center_row = 0.0;
  double center_col = 0.0;
  std::vector<Pixel> boundary;
  double cht = 0.0;
  RotatedBox box;
};

/// Statistics for labels 0..L-1 of a compacted map. CHT is only evaluated
/// when with_cht is set (it is the expensive part).
std::vector<ObjectStats> object_stats(const LabelMap& labels, bool with_cht,
                                      std::pair<double, double> radius_range = {4.0, 16.0});

Mask label_mask(const LabelMap& labels, int label);

// --- files -----------------------------------------------------------------------

/// 8-bit binary PGM (P5); intensities scaled by 255 and rounded.
void write_pgm(const std::string& path, const Image& img);
Image read_pgm(const std::string& path);

/// "LBL1", uint32 height, uint32 width, int32 labels, all little-endian.
void write_labels(const std::string& path, const LabelMap& labels);
LabelMap read_labels(const std::string& path);

/// "FEA1", uint32 rows, uint32 dim, float64 row-major values, little-endian.
void write_features(const std::string& path, const ad::Matrix& features);
ad::Matrix read_features(const std::string& path);

}  // namespace priorseg::imaging
