#include "priorseg/pretrain.hpp"

#include "priorseg/rag.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

namespace priorseg::pretrain {

Neighbourhood conv_neighbourhood(int height, int width) {
  Neighbourhood nb(9, std::vector<int>(static_cast<std::size_t>(height) * static_cast<std::size_t>(width)));
  int k = 0;
  for (int dr = -1; dr <= 1; ++dr) {
    for (int dc = -1; dc <= 1; ++dc, ++k) {
      auto& idx = nb[static_cast<std::size_t>(k)];
      for (int r = 0; r < height; ++r) {
        const int rr = imaging::reflect_index(r + dr, height);
        for (int c = 0; c < width; ++c)
          idx[static_cast<std::size_t>(r * width + c)] = rr * width + imaging::reflect_index(c + dc, width);
      }
    }
  }
  return nb;
}

ConvEncoder ConvEncoder::create(ad::ParameterSet& params, const std::string& prefix, int in_channels,
                                const std::vector<int>& channels, std::uint64_t seed) {
  if (channels.empty()) throw std::invalid_argument("conv encoder needs at least one layer");
  int in = in_channels;
  for (std::size_t k = 0; k < channels.size(); ++k) {
    const std::vector<int> sizes{9 * in, channels[k]};
    ad::append_dense_layers(params, prefix + "conv" + std::to_string(k) + ".", sizes, seed + k);
    in = channels[k];
  }
  return bind(params, prefix, channels.size());
}

ConvEncoder ConvEncoder::bind(ad::ParameterSet& params, const std::string& prefix, std::size_t num_layers) {
  ConvEncoder enc;
  for (std::size_t k = 0; k < num_layers; ++k) {
    const std::string stem = prefix + "conv" + std::to_string(k) + ".layer0";
    enc.weights_.push_back(&params.at(stem + ".weight"));
    enc.biases_.push_back(&params.at(stem + ".bias"));
  }
  return enc;
}

int ConvEncoder::in_channels() const { return static_cast<int>(weights_.front()->value.rows() / 9); }
int ConvEncoder::out_dim() const { return static_cast<int>(weights_.back()->value.cols()); }

ad::Var ConvEncoder::operator()(ad::Var pixels, const Neighbourhood& nb, bool trainable) const {
  if (weights_.empty()) throw std::logic_error("empty ConvEncoder");
  if (pixels.cols() != in_channels())
    throw ad::ShapeError("conv_encoder", "input " + ad::shape_string(pixels.value()) + " expects " +
                                             std::to_string(in_channels()) + " channels");
  if (nb.size() != 9 || static_cast<ad::Index>(nb[0].size()) != pixels.rows())
    throw ad::ShapeError("conv_encoder", "neighbourhood does not match " + ad::shape_string(pixels.value()));
  ad::Tape& t = pixels.tape();
  ad::Var h = pixels;
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    h = ad::add(ad::matmul(ad::gather_stack(h, nb), t.param(*weights_[k], trainable)),
                t.param(*biases_[k], trainable));
    if (k + 1 < weights_.size()) h = ad::relu(h);
  }
  return h;
}

ad::Matrix ConvEncoder::evaluate(const ad::Matrix& pixels, const Neighbourhood& nb) const {
  ad::Tape t;
  return (*this)(t.constant(pixels), nb, false).value();
}

imaging::Image superpixel_boundary_map(const imaging::LabelMap& superpixels) {
  const Eigen::Index h = superpixels.rows(), w = superpixels.cols();
  imaging::Image out = imaging::Image::Zero(h, w);
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < w; ++c) {
      if (c + 1 < w && superpixels(r, c) != superpixels(r, c + 1)) out(r, c) = out(r, c + 1) = 1.0;
      if (r + 1 < h && superpixels(r, c) != superpixels(r + 1, c)) out(r, c) = out(r + 1, c) = 1.0;
    }
  }
  return out;
}

ad::Matrix encoder_input(const imaging::Image& image, const imaging::LabelMap& superpixels, double boundary_sigma) {
  if (image.rows() != superpixels.rows() || image.cols() != superpixels.cols())
    throw std::invalid_argument("encoder_input: image and superpixels differ in shape");
  imaging::Image edges = imaging::gaussian_smooth(superpixel_boundary_map(superpixels), boundary_sigma);
  const double peak = edges.maxCoeff();
  if (peak > 0) edges /= peak;
  ad::Matrix out(image.size(), 2);
  out.col(0) = Eigen::Map<const Eigen::VectorXd>(image.data(), image.size());
  out.col(1) = Eigen::Map<const Eigen::VectorXd>(edges.data(), edges.size());
  return out;
}

void EmbeddingConfig::validate() const {
  if (dim < 1) throw std::invalid_argument("embedding dim must be >= 1");
  if (delta_v < 0) throw std::invalid_argument("delta_v must be >= 0");
  if (!(delta_d > delta_v)) throw std::invalid_argument("delta_d must exceed delta_v");
}

std::vector<double> boundary_edge_weights(const imaging::Image& image, const imaging::LabelMap& superpixels,
                                          const gnn::GraphTopology& topology, double sigma) {
  const imaging::Image g = imaging::gaussian_gradient(image, sigma);
  std::map<std::pair<int, int>, std::pair<double, int>> acc;
  auto visit = [&](int a, int b, double v) {
    if (a == b) return;
    auto& slot = acc[{std::min(a, b), std::max(a, b)}];
    slot.first += v;
    ++slot.second;
  };
  const Eigen::Index h = superpixels.rows(), w = superpixels.cols();
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < w; ++c) {
      if (c + 1 < w) visit(superpixels(r, c), superpixels(r, c + 1), 0.5 * (g(r, c) + g(r, c + 1)));
      if (r + 1 < h) visit(superpixels(r, c), superpixels(r + 1, c), 0.5 * (g(r, c) + g(r + 1, c)));
    }
  }
  std::vector<double> out(topology.edges.size(), 0.0);
  for (std::size_t e = 0; e < out.size(); ++e) {
    auto it = acc.find(topology.edges[e]);
    if (it != acc.end()) out[e] = it->second.first / it->second.second;
  }
  const double total = std::accumulate(out.begin(), out.end(), 0.0);
  if (out.empty()) return out;
  if (total > 0) {
    for (double& x : out) x /= total;
  } else {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(out.size()));
  }
  return out;
}

ad::Var contrastive_loss(ad::Var pixel_embeddings, const imaging::LabelMap& superpixels,
                         const gnn::GraphTopology& topology, std::span<const double> edge_weights,
                         const EmbeddingConfig& cfg) {
  if (pixel_embeddings.rows() != superpixels.size())
    throw ad::ShapeError("contrastive_loss", ad::shape_string(pixel_embeddings.value()) + " embeddings for " +
                                                 std::to_string(superpixels.size()) + " pixels");
  if (edge_weights.size() != topology.edges.size())
    throw std::invalid_argument("contrastive_loss: " + std::to_string(edge_weights.size()) + " weights for " +
                                std::to_string(topology.edges.size()) + " edges");
  const int n = topology.num_nodes;
  std::vector<int> seg(superpixels.data(), superpixels.data() + superpixels.size());
  std::vector<int> count(static_cast<std::size_t>(n), 0);
  for (int s : seg) {
    if (s < 0 || s >= n) throw std::invalid_argument("contrastive_loss: superpixel id out of range");
    ++count[static_cast<std::size_t>(s)];
  }
  for (int v = 0; v < n; ++v)
    if (count[static_cast<std::size_t>(v)] == 0)
      throw std::invalid_argument("contrastive_loss: superpixel " + std::to_string(v) + " is empty");
  ad::Tape& t = pixel_embeddings.tape();

  ad::Var f = ad::segment_mean(pixel_embeddings, seg, n);
  ad::Var d_pix = ad::sqrt(ad::sum(ad::square(pixel_embeddings - ad::gather_rows(f, seg)), 1));
  ad::Var pull = ad::square(ad::relu(ad::add_scalar(d_pix, -cfg.delta_v)));
  ad::Var l_var = ad::mean(ad::segment_mean(pull, seg, n));
  if (topology.edges.empty()) return l_var;

  std::vector<int> lo, hi;
  for (auto [i, j] : topology.edges) {
    lo.push_back(i);
    hi.push_back(j);
  }
  ad::Var d_edge = ad::sqrt(ad::sum(ad::square(ad::gather_rows(f, lo) - ad::gather_rows(f, hi)), 1));
  ad::Var push = ad::square(ad::relu(ad::add_scalar(-d_edge, 2.0 * cfg.delta_d)));
  ad::Matrix w = Eigen::Map<const Eigen::VectorXd>(edge_weights.data(), static_cast<Eigen::Index>(edge_weights.size()));
  ad::Var l_dist = ad::sum(ad::mul(push, t.constant(std::move(w))));
  return l_var + l_dist;
}

PretrainItem make_pretrain_item(const imaging::Image& image, const imaging::LabelMap& superpixels,
                                double gradient_sigma) {
  PretrainItem item;
  item.superpixels = imaging::compact_labels(superpixels);
  item.input = encoder_input(image, item.superpixels);
  item.topology = gnn::GraphTopology::from_edges(imaging::num_labels(item.superpixels),
                                                 rag::adjacent_label_pairs(item.superpixels));
  item.edge_weights = boundary_edge_weights(image, item.superpixels, item.topology, gradient_sigma);
  return item;
}

double mean_loss(const ConvEncoder& encoder, std::span<const PretrainItem> items, const EmbeddingConfig& cfg) {
  if (items.empty()) return 0.0;
  double total = 0.0;
  for (const PretrainItem& it : items) {
    ad::Tape t;
    const auto nb = conv_neighbourhood(static_cast<int>(it.superpixels.rows()), static_cast<int>(it.superpixels.cols()));
    total += contrastive_loss(encoder(t.constant(it.input), nb, false), it.superpixels, it.topology,
                              it.edge_weights, cfg)
                 .scalar();
  }
  return total / static_cast<double>(items.size());
}

PretrainResult pretrain_features(std::span<const PretrainItem> items, const PretrainConfig& cfg) {
  cfg.embedding.validate();
  if (items.empty()) throw std::invalid_argument("pretrain_features: no images");
  PretrainResult res;
  res.params = std::make_shared<ad::ParameterSet>();
  std::vector<int> channels = cfg.hidden_channels;
  channels.push_back(cfg.embedding.dim);
  res.encoder = ConvEncoder::create(*res.params, "encoder/", static_cast<int>(items[0].input.cols()), channels, cfg.seed);

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::map<std::pair<Eigen::Index, Eigen::Index>, Neighbourhood> nbs;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t k : order) {
      const PretrainItem& it = items[k];
      const auto key = std::make_pair(it.superpixels.rows(), it.superpixels.cols());
      if (!nbs.count(key)) nbs[key] = conv_neighbourhood(static_cast<int>(key.first), static_cast<int>(key.second));
      ad::Tape t;
      ad::Var loss = contrastive_loss(res.encoder(t.constant(it.input), nbs[key]), it.superpixels, it.topology,
                                      it.edge_weights, cfg.embedding);
      total += loss.scalar();
      t.backward(loss);
      ad::adam_step(*res.params, cfg.lr, 0.9, 0.999, 1e-8);
    }
    res.epoch_losses.push_back(total / static_cast<double>(items.size()));
  }
  res.final_loss = mean_loss(res.encoder, items, cfg.embedding);
  return res;
}

DistanceStats embedding_distance_stats(const ad::Matrix& pixel_embeddings, const imaging::LabelMap& superpixels,
                                       const gnn::GraphTopology& topology) {
  const int n = topology.num_nodes;
  ad::Matrix mean = ad::Matrix::Zero(n, pixel_embeddings.cols());
  std::vector<int> count(static_cast<std::size_t>(n), 0);
  for (Eigen::Index p = 0; p < superpixels.size(); ++p) {
    const int s = superpixels.data()[p];
    mean.row(s) += pixel_embeddings.row(p);
    ++count[static_cast<std::size_t>(s)];
  }
  for (int v = 0; v < n; ++v)
    if (count[static_cast<std::size_t>(v)] > 0) mean.row(v) /= count[static_cast<std::size_t>(v)];
  DistanceStats st;
  for (Eigen::Index p = 0; p < superpixels.size(); ++p)
    st.intra += (pixel_embeddings.row(p) - mean.row(superpixels.data()[p])).norm();
  st.intra /= static_cast<double>(std::max<Eigen::Index>(1, superpixels.size()));
  for (auto [i, j] : topology.edges) st.inter += (mean.row(i) - mean.row(j)).norm();
  st.inter /= static_cast<double>(std::max<std::size_t>(1, topology.edges.size()));
  return st;
}

}  // namespace priorseg::pretrain
