#pragma once

// Stateless soft actor-critic over superpixel graphs: the actor predicts a
// squashed Gaussian per edge, the critic scores fixed-size subgraphs, and
// each episode is a single multicut step.

#include "priorseg/autodiff.hpp"
#include "priorseg/gnn.hpp"
#include "priorseg/partitioning.hpp"
#include "priorseg/pretrain.hpp"
#include "priorseg/rag.hpp"
#include "priorseg/rewards.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace priorseg::agent {

enum class FeatureMode { joint, pretrained, handcrafted };
FeatureMode parse_feature_mode(const std::string& s);
std::string to_string(FeatureMode m);

struct AgentConfig {
  FeatureMode feature_mode = FeatureMode::joint;
  std::vector<int> encoder_channels{8, 8};  ///< hidden conv widths (joint mode)
  int encoder_dim = 8;                      ///< pooled pixel feature width (joint mode)
  int hidden = 32;                          ///< graph convolution width
  int conv_layers = 3;
  int edge_dim = 16;                        ///< critic edge feature width
  int critic_hidden = 64;
  std::vector<int> subgraph_sizes{6, 12, 32, 128};

  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  double alpha_lr = 1e-3;
  double init_alpha = 0.05;
  double target_entropy = -1.0;  ///< per edge
  double logvar_min = -8.0;
  double logvar_max = 2.0;
  int batch_size = 4;
  int buffer_capacity = 512;
  bool overlap_normalization = false;  ///< divide each edge's log-density by its subgraph coverage
  std::uint64_t seed = 0;

  void validate() const;
};

/// One image prepared for the environment. Subgraphs are cached per size.
struct EnvImage {
  int id = 0;
  rag::Rag rag;                         ///< features: handcrafted node features
  ad::Matrix pixel_input;               ///< encoder input (joint mode)
  std::shared_ptr<const pretrain::Neighbourhood> neighbourhood;
  ad::Matrix fixed_features;            ///< frozen pretrained node features (pretrained mode)
  std::vector<int> sizes;               ///< effective subgraph sizes
  std::vector<std::vector<rag::SubGraph>> subgraphs;
  std::vector<double> gt_edges;         ///< only filled when the reward is supervised
  bool supervised = false;
};

/// Builds superpixel graph, features and subgraph lists. Subgraph seeds derive
/// from (seed, id). The frozen encoder is only used in pretrained mode.
EnvImage prepare_image(int id, const imaging::Image& image, const imaging::LabelMap& superpixels,
                       const AgentConfig& cfg, const pretrain::ConvEncoder* frozen_encoder, std::uint64_t seed);

struct ActionSet {
  std::vector<double> mean;
  std::vector<double> logvar;
  std::vector<double> pre_squash;
  std::vector<double> action;
  std::vector<double> log_density;
};

struct ReplayEntry {
  int image = 0;  ///< index into the training image list
  std::vector<double> actions;
  rewards::RewardVector rewards;
};

/// Per-subgraph rewards for a partition, one list per cached size.
using RewardFn = std::function<rewards::RewardVector(const EnvImage&, std::span<const double> actions,
                                                     const partitioning::Partition&)>;

/// "circles", "ring", "supervised-dice" or "mixed" (Dice where EnvImage::supervised).
RewardFn make_reward_fn(const std::string& suite, const rewards::RewardConfig& cfg, double ring_fraction = 0.3);

/// Actor, critic and temperature parameters. Parameter addresses are stable.
class Networks {
 public:
  Networks(const AgentConfig& cfg, int node_feature_dim);
  Networks(const Networks&) = delete;
  Networks& operator=(const Networks&) = delete;

  const AgentConfig& config() const { return cfg_; }
  int node_feature_dim() const { return node_dim_; }

  /// Node features for the actor (constants) or the critic (encoder trainable).
  ad::Var node_features(ad::Tape& t, const EnvImage& img, bool trainable_encoder);

  /// Per edge (mean, log-variance before clamping) as E x 2.
  ad::Var actor_head(const EnvImage& img, ad::Var features, bool trainable = true);
  /// One (num subgraphs x 1) column per cached size.
  std::vector<ad::Var> critic_q(const EnvImage& img, ad::Var features, ad::Var actions, bool trainable = true);

  double alpha() const;
  ad::ParameterSet& actor_params() { return actor_; }
  ad::ParameterSet& critic_params() { return critic_; }
  ad::ParameterSet& alpha_params() { return alpha_; }

  void save(ad::Checkpoint& ckpt) const;
  void load(const ad::Checkpoint& ckpt);

 private:
  AgentConfig cfg_;
  int node_dim_;
  ad::ParameterSet actor_, critic_, alpha_;
  pretrain::ConvEncoder encoder_;
  std::vector<gnn::Mlp> actor_gamma_, actor_phi_, critic_gamma_, critic_phi_;
  gnn::Mlp actor_out_, critic_out_;
  std::map<int, gnn::Mlp> heads_;
};

/// Width of the node features fed to the graph networks under cfg.
int node_feature_dim(const AgentConfig& cfg, int pretrained_dim);

/// Reparameterised squashed Gaussian. noise is E x 1 (zero for deterministic
/// use). Returns actions (E x 1) and log-densities (E x 1).
struct PolicySample {
  ad::Var pre_squash;
  ad::Var action;
  ad::Var log_density;
};
PolicySample squashed_sample(ad::Var head, const ad::Matrix& noise, double logvar_min, double logvar_max);

/// Samples (or, deterministic, returns sigmoid(mean)) for every edge.
ActionSet act(Networks& nets, const EnvImage& img, bool deterministic, std::uint64_t seed);

/// (1/|SG|) sum_sg [alpha * sum_{e in sg} w_e log pi_e - Q_sg] over all sizes.
/// edge_weights (may be empty) scales each edge's log-density.
ad::Var actor_loss(ad::Var log_density, std::span<const ad::Var> q, const EnvImage& img, double alpha,
                   std::span<const double> edge_weights = {});

/// (1/|SG|) sum_sg 0.5 (Q_sg - r_sg)^2. Throws on a length mismatch.
ad::Var critic_loss(std::span<const ad::Var> q, const rewards::RewardVector& r);

/// -alpha (mean log-density + target entropy); returns the loss value and
/// applies one Adam step to log alpha.
double temperature_update(ad::ParameterSet& alpha_params, double mean_log_density, double target_entropy,
                          double lr);

/// Per edge 1 / (number of cached subgraphs containing it), or 1 if uncovered.
std::vector<double> coverage_weights(const EnvImage& img);

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}
  void push(ReplayEntry e);
  std::size_t size() const { return entries_.size(); }
  std::vector<const ReplayEntry*> sample(std::size_t n, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::deque<ReplayEntry> entries_;
};

struct LossReport {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha_loss = 0.0;
  double alpha = 0.0;
  double mean_reward = 0.0;
  std::vector<double> mean_reward_per_size;  ///< aligned with AgentConfig::subgraph_sizes (NaN if absent)
};

/// Critic update on the stored actions, then actor update with fresh
/// reparameterised samples (critic frozen), then the temperature update.
/// Throws std::runtime_error when a loss is non-finite.
LossReport train_step(Networks& nets, std::span<const EnvImage> images, std::span<const ReplayEntry* const> batch,
                      std::uint64_t seed, bool update_actor = true);

/// act (sampled or deterministic) -> multicut -> rewards.
ReplayEntry explore_episode(Networks& nets, const EnvImage& img, int image_index, const RewardFn& reward,
                            std::uint64_t seed, bool deterministic = false,
                            partitioning::Partition* partition_out = nullptr);

/// Multicut of given actions on the image's graph.
partitioning::Partition segment(const EnvImage& img, std::span<const double> actions);

}  // namespace priorseg::agent
