#include "priorseg/agent.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace priorseg::agent {

FeatureMode parse_feature_mode(const std::string& s) {
  if (s == "joint") return FeatureMode::joint;
  if (s == "pretrained") return FeatureMode::pretrained;
  if (s == "handcrafted") return FeatureMode::handcrafted;
  throw std::invalid_argument("unknown feature mode '" + s + "' (joint | pretrained | handcrafted)");
}

std::string to_string(FeatureMode m) {
  switch (m) {
    case FeatureMode::joint: return "joint";
    case FeatureMode::pretrained: return "pretrained";
    case FeatureMode::handcrafted: return "handcrafted";
  }
  return "?";
}

void AgentConfig::validate() const {
  if (hidden < 1 || edge_dim < 1 || critic_hidden < 1 || encoder_dim < 1)
    throw std::invalid_argument("agent: network widths must be >= 1");
  if (conv_layers < 1) throw std::invalid_argument("agent: conv_layers must be >= 1");
  for (int c : encoder_channels)
    if (c < 1) throw std::invalid_argument("agent: encoder channels must be >= 1");
  rag::SubgraphSchedule{subgraph_sizes}.validate();
  if (!(actor_lr > 0 && critic_lr > 0 && alpha_lr > 0)) throw std::invalid_argument("agent: learning rates must be > 0");
  if (!(init_alpha > 0)) throw std::invalid_argument("agent: init_alpha must be > 0");
  if (!(logvar_min < logvar_max)) throw std::invalid_argument("agent: logvar_min must be < logvar_max");
  if (batch_size < 1) throw std::invalid_argument("agent: batch_size must be >= 1");
  if (buffer_capacity < batch_size) throw std::invalid_argument("agent: buffer_capacity must be >= batch_size");
}

int node_feature_dim(const AgentConfig& cfg, int pretrained_dim) {
  constexpr int handcrafted = 4;
  switch (cfg.feature_mode) {
    case FeatureMode::joint: return cfg.encoder_dim + handcrafted;
    case FeatureMode::pretrained: return pretrained_dim + handcrafted;
    case FeatureMode::handcrafted: return handcrafted;
  }
  return handcrafted;
}

EnvImage prepare_image(int id, const imaging::Image& image, const imaging::LabelMap& superpixels,
                       const AgentConfig& cfg, const pretrain::ConvEncoder* frozen_encoder, std::uint64_t seed) {
  EnvImage img;
  img.id = id;
  const imaging::LabelMap sp = imaging::compact_labels(superpixels);
  img.rag = rag::build_rag(sp, imaging::handcrafted_node_features(sp));
  const int h = static_cast<int>(image.rows()), w = static_cast<int>(image.cols());
  if (cfg.feature_mode != FeatureMode::handcrafted) {
    img.neighbourhood = std::make_shared<const pretrain::Neighbourhood>(pretrain::conv_neighbourhood(h, w));
    img.pixel_input = pretrain::encoder_input(image, sp);
  }
  if (cfg.feature_mode == FeatureMode::pretrained) {
    if (frozen_encoder == nullptr) throw std::invalid_argument("prepare_image: pretrained mode needs an encoder");
    img.fixed_features = imaging::pool_node_features(frozen_encoder->evaluate(img.pixel_input, *img.neighbourhood), sp);
    img.pixel_input.resize(0, 0);
  }
  img.sizes = rag::SubgraphSchedule{cfg.subgraph_sizes}.effective(img.rag.num_edges());
  for (std::size_t k = 0; k < img.sizes.size(); ++k) {
    const std::uint64_t s = seed * 1000003ULL + static_cast<std::uint64_t>(id) * 101ULL + k;
    img.subgraphs.push_back(rag::extract_subgraphs(img.rag, img.sizes[k], s));
  }
  return img;
}

Networks::Networks(const AgentConfig& cfg, int node_feature_dim) : cfg_(cfg), node_dim_(node_feature_dim) {
  cfg_.validate();
  std::uint64_t seed = cfg_.seed * 7919ULL + 17ULL;
  auto next = [&seed] { return seed++; };
  const int hd = cfg_.hidden;

  if (cfg_.feature_mode == FeatureMode::joint) {
    std::vector<int> channels = cfg_.encoder_channels;
    channels.push_back(cfg_.encoder_dim);
    encoder_ = pretrain::ConvEncoder::create(critic_, "encoder/", 2, channels, next());
  }
  int d = node_dim_;
  for (int l = 0; l < cfg_.conv_layers; ++l) {
    const std::string a = "conv" + std::to_string(l);
    actor_phi_.push_back(gnn::Mlp::create(actor_, a + ".phi.", {2 * d, hd, hd}, next()));
    actor_gamma_.push_back(gnn::Mlp::create(actor_, a + ".gamma.", {d + hd, hd, hd}, next()));
    critic_phi_.push_back(gnn::Mlp::create(critic_, a + ".phi.", {2 * d + 1, hd, hd}, next()));
    critic_gamma_.push_back(gnn::Mlp::create(critic_, a + ".gamma.", {d + hd, hd, hd}, next()));
    d = hd;
  }
  actor_out_ = gnn::Mlp::create(actor_, "readout.", {2 * hd, hd, 2}, next());
  critic_out_ = gnn::Mlp::create(critic_, "readout.", {2 * hd, hd, cfg_.edge_dim}, next());
  for (int s : cfg_.subgraph_sizes) {
    if (heads_.count(s)) continue;
    heads_[s] = gnn::Mlp::create(critic_, "head" + std::to_string(s) + ".",
                                 {s * cfg_.edge_dim, cfg_.critic_hidden, 1}, next());
  }
  alpha_.add("log_alpha", ad::Matrix::Constant(1, 1, std::log(cfg_.init_alpha)));
}

ad::Var Networks::node_features(ad::Tape& t, const EnvImage& img, bool trainable_encoder) {
  const ad::Matrix& hand = img.rag.features;
  ad::Var handcrafted = t.constant(hand);
  ad::Var out;
  switch (cfg_.feature_mode) {
    case FeatureMode::handcrafted:
      out = handcrafted;
      break;
    case FeatureMode::pretrained: {
      const std::vector<ad::Var> parts{t.constant(img.fixed_features), handcrafted};
      out = ad::concat_cols(parts);
      break;
    }
    case FeatureMode::joint: {
      if (img.pixel_input.size() == 0 || !img.neighbourhood)
        throw std::invalid_argument("node_features: image was prepared without pixel input");
      ad::Var pix = encoder_(t.constant(img.pixel_input), *img.neighbourhood, trainable_encoder);
      const imaging::LabelMap& sp = *img.rag.superpixels;
      const std::vector<int> seg(sp.data(), sp.data() + sp.size());
      const std::vector<ad::Var> parts{ad::segment_mean(pix, seg, img.rag.num_nodes()), handcrafted};
      out = ad::concat_cols(parts);
      break;
    }
  }
  if (out.cols() != node_dim_)
    throw ad::ShapeError("node_features", ad::shape_string(out.value()) + " but networks expect " +
                                              std::to_string(node_dim_) + " columns");
  return out;
}

ad::Var Networks::actor_head(const EnvImage& img, ad::Var features, bool trainable) {
  ad::Var h = features;
  for (std::size_t l = 0; l < actor_phi_.size(); ++l) {
    h = gnn::actor_conv(img.rag.topology, h, actor_gamma_[l], actor_phi_[l], trainable);
    if (l + 1 < actor_phi_.size()) h = ad::relu(h);
  }
  return gnn::edge_readout(h, img.rag.topology, actor_out_, trainable);
}

std::vector<ad::Var> Networks::critic_q(const EnvImage& img, ad::Var features, ad::Var actions, bool trainable) {
  const gnn::GraphTopology& g = img.rag.topology;
  ad::Var h = features;
  for (std::size_t l = 0; l < critic_phi_.size(); ++l) {
    h = gnn::critic_conv(g, h, actions, critic_gamma_[l], critic_phi_[l], trainable);
    if (l + 1 < critic_phi_.size()) h = ad::relu(h);
  }
  ad::Var edges = gnn::edge_readout(h, g, critic_out_, trainable);
  std::vector<ad::Var> out;
  for (std::size_t k = 0; k < img.sizes.size(); ++k) {
    const int size = img.sizes[k];
    auto it = heads_.find(size);
    if (it == heads_.end()) throw std::invalid_argument("critic_q: no head for subgraph size " + std::to_string(size));
    const auto& subs = img.subgraphs[k];
    if (subs.empty()) {
      out.push_back(features.tape().constant(ad::Matrix::Zero(0, 1)));
      continue;
    }
    std::vector<int> flat;
    flat.reserve(subs.size() * static_cast<std::size_t>(size));
    for (const rag::SubGraph& sg : subs) {
      std::vector<int> order = sg.edges;
      std::sort(order.begin(), order.end(), [&g](int a, int b) {
        return g.edges[static_cast<std::size_t>(a)] < g.edges[static_cast<std::size_t>(b)];
      });
      flat.insert(flat.end(), order.begin(), order.end());
    }
    ad::Var rows = ad::reshape(ad::gather_rows(edges, flat), static_cast<ad::Index>(subs.size()),
                               static_cast<ad::Index>(size) * cfg_.edge_dim);
    out.push_back(it->second(rows, trainable));
  }
  return out;
}

double Networks::alpha() const { return std::exp(alpha_.at("log_alpha").value(0, 0)); }

void Networks::save(ad::Checkpoint& ckpt) const {
  ad::export_params(actor_, "actor/", ckpt, true);
  ad::export_params(critic_, "critic/", ckpt, true);
  ad::export_params(alpha_, "temperature/", ckpt, true);
}

void Networks::load(const ad::Checkpoint& ckpt) {
  ad::import_params(actor_, "actor/", ckpt);
  ad::import_params(critic_, "critic/", ckpt);
  ad::import_params(alpha_, "temperature/", ckpt);
}

RewardFn make_reward_fn(const std::string& suite, const rewards::RewardConfig& cfg, double ring_fraction) {
  cfg.validate();
  auto circles = [cfg](const EnvImage& img, std::span<const double>, const partitioning::Partition& p) {
    const imaging::LabelMap lm = partitioning::partition_to_labelmap(p, *img.rag.superpixels);
    const rewards::CirclesObjects obj = rewards::circles_object_rewards(lm, cfg);
    rewards::RewardVector rv;
    rv.global_foreground = obj.global_foreground;
    rv.global_background = obj.global_background;
    for (const auto& subs : img.subgraphs)
      rv.per_size.push_back(rewards::decompose_rewards(obj.rewards, p, img.rag.topology, subs));
    return rv;
  };
  auto dice = [](const EnvImage& img, std::span<const double> actions, const partitioning::Partition&) {
    if (img.gt_edges.size() != actions.size())
      throw std::invalid_argument("supervised reward: image " + std::to_string(img.id) + " has no edge labels");
    rewards::RewardVector rv;
    for (const auto& subs : img.subgraphs) {
      std::vector<double> r;
      r.reserve(subs.size());
      for (const rag::SubGraph& sg : subs) r.push_back(rewards::supervised_dice_reward(actions, img.gt_edges, sg));
      rv.per_size.push_back(std::move(r));
    }
    return rv;
  };
  if (suite == "circles") return circles;
  if (suite == "supervised-dice") return dice;
  if (suite == "mixed") {
    return [circles, dice](const EnvImage& img, std::span<const double> a, const partitioning::Partition& p) {
      return img.supervised ? dice(img, a, p) : circles(img, a, p);
    };
  }
  if (suite == "ring") {
    return [cfg, ring_fraction](const EnvImage& img, std::span<const double> actions,
                                const partitioning::Partition& p) {
      const imaging::LabelMap& sp = *img.rag.superpixels;
      rewards::RewardConfig c = cfg;
      c.set_ring_geometry(static_cast<int>(sp.rows()), static_cast<int>(sp.cols()), ring_fraction);
      const imaging::LabelMap lm = partitioning::partition_to_labelmap(p, sp);
      const auto edge = rewards::ring_edge_rewards(lm, p, img.rag.topology, actions, c);
      rewards::RewardVector rv;
      for (const auto& subs : img.subgraphs) rv.per_size.push_back(rewards::subgraph_means(edge, subs));
      return rv;
    };
  }
  throw std::invalid_argument("unknown reward suite '" + suite + "' (circles | ring | supervised-dice | mixed)");
}

}  // namespace priorseg::agent
