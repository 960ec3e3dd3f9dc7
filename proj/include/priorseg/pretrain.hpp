#pragma once

// Small per-pixel convolutional encoder and the superpixel-contrastive
// embedding loss used to pretrain it.

#include "priorseg/autodiff.hpp"
#include "priorseg/gnn.hpp"
#include "priorseg/imaging.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace priorseg::pretrain {

/// Flat source indices of the 3x3 neighbourhood of every pixel with mirrored
/// borders; entry k (row-major over offsets -1..1) has one index per pixel.
using Neighbourhood = std::vector<std::vector<int>>;
Neighbourhood conv_neighbourhood(int height, int width);

/// Stride-1 3x3 convolutions with ReLU between layers and a linear last layer,
/// applied to a (pixels x channels) matrix in row-major pixel order.
class ConvEncoder {
 public:
  ConvEncoder() = default;

  /// channels lists the output width of every layer.
  static ConvEncoder create(ad::ParameterSet& params, const std::string& prefix, int in_channels,
                            const std::vector<int>& channels, std::uint64_t seed);
  static ConvEncoder bind(ad::ParameterSet& params, const std::string& prefix, std::size_t num_layers);

  ad::Var operator()(ad::Var pixels, const Neighbourhood& nb, bool trainable = true) const;
  /// Plain evaluation without gradients.
  ad::Matrix evaluate(const ad::Matrix& pixels, const Neighbourhood& nb) const;

  int in_channels() const;
  int out_dim() const;
  std::size_t num_layers() const { return weights_.size(); }

 private:
  std::vector<ad::Parameter*> weights_;  ///< (9 * in) x out
  std::vector<ad::Parameter*> biases_;
};

/// 1 where a pixel has a 4-neighbour in another superpixel, else 0.
imaging::Image superpixel_boundary_map(const imaging::LabelMap& superpixels);

/// Encoder input: raw image and the Gaussian-smoothed superpixel boundary map
/// (rescaled to a maximum of 1) as two channels.
ad::Matrix encoder_input(const imaging::Image& image, const imaging::LabelMap& superpixels,
                         double boundary_sigma = 1.0);

struct EmbeddingConfig {
  int dim = 8;
  double delta_v = 0.1;  ///< pull margin
  double delta_d = 1.0;  ///< push margin (the hinge uses 2 delta_d)

  void validate() const;
};

/// Per RAG edge, the mean Gaussian-gradient value over the pixel pairs that
/// straddle the two superpixels, normalised so the weights sum to 1 (uniform
/// if every boundary is flat).
std::vector<double> boundary_edge_weights(const imaging::Image& image, const imaging::LabelMap& superpixels,
                                          const gnn::GraphTopology& topology, double sigma);

/// Pull term over pixels to their superpixel mean plus weighted push term over
/// RAG edges. Throws on an empty superpixel or a weight count mismatch.
ad::Var contrastive_loss(ad::Var pixel_embeddings, const imaging::LabelMap& superpixels,
                         const gnn::GraphTopology& topology, std::span<const double> edge_weights,
                         const EmbeddingConfig& cfg);

struct PretrainItem {
  ad::Matrix input;  ///< encoder_input of the image
  imaging::LabelMap superpixels;
  gnn::GraphTopology topology;
  std::vector<double> edge_weights;
};

PretrainItem make_pretrain_item(const imaging::Image& image, const imaging::LabelMap& superpixels,
                                double gradient_sigma);

struct PretrainConfig {
  EmbeddingConfig embedding;
  std::vector<int> hidden_channels{16, 16};
  double lr = 3e-3;
  int epochs = 10;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  std::shared_ptr<ad::ParameterSet> params;
  ConvEncoder encoder;
  std::vector<double> epoch_losses;  ///< per epoch, mean of the losses seen just before each update
  double final_loss = 0.0;           ///< mean loss after the last epoch
};

/// Adam on the contrastive loss, one update per image, images visited in a
/// seeded shuffled order each epoch.
PretrainResult pretrain_features(std::span<const PretrainItem> items, const PretrainConfig& cfg);

/// Mean contrastive loss of the encoder over items (no updates).
double mean_loss(const ConvEncoder& encoder, std::span<const PretrainItem> items, const EmbeddingConfig& cfg);

struct DistanceStats {
  double intra = 0.0;  ///< mean pixel-to-own-superpixel-mean distance
  double inter = 0.0;  ///< mean distance between adjacent superpixel means
};
DistanceStats embedding_distance_stats(const ad::Matrix& pixel_embeddings, const imaging::LabelMap& superpixels,
                                       const gnn::GraphTopology& topology);

}  // namespace priorseg::pretrain
