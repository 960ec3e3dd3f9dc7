#include "priorseg/agent.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace priorseg::agent {
namespace {

bool all_finite(const ad::Matrix& m) { return m.allFinite(); }

ad::Matrix column(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_vector(const ad::Matrix& m) { return {m.data(), m.data() + m.size()}; }

}  // namespace

PolicySample squashed_sample(ad::Var head, const ad::Matrix& noise, double logvar_min, double logvar_max) {
  if (head.cols() != 2 || noise.rows() != head.rows() || noise.cols() != 1)
    throw ad::ShapeError("squashed_sample", "head " + ad::shape_string(head.value()) + ", noise " +
                                                ad::shape_string(noise));
  ad::Tape& t = head.tape();
  ad::Var mean = ad::slice_cols(head, 0, 1);
  ad::Var logvar = ad::clamp(ad::slice_cols(head, 1, 1), logvar_min, logvar_max);
  ad::Var eps = t.constant(noise);
  ad::Var u = mean + ad::mul(ad::exp(logvar * 0.5), eps);
  PolicySample s;
  s.pre_squash = u;
  s.action = ad::sigmoid(u);
  // Normal log-density at u minus log(a (1 - a)) = -softplus(-u) - softplus(u).
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  ad::Var normal = ad::add_scalar(t.constant(-0.5 * noise.array().square().matrix()) - logvar * 0.5, -half_log_2pi);
  s.log_density = normal + ad::softplus(u) + ad::softplus(-u);
  return s;
}

ActionSet act(Networks& nets, const EnvImage& img, bool deterministic, std::uint64_t seed) {
  ad::Tape t;
  ad::Var head = nets.actor_head(img, nets.node_features(t, img, false), false);
  if (!all_finite(head.value()))
    throw std::runtime_error("act: non-finite actor output on image " + std::to_string(img.id));
  const ad::Index e = head.rows();
  ad::Matrix noise = ad::Matrix::Zero(e, 1);
  if (!deterministic) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (ad::Index i = 0; i < e; ++i) noise(i, 0) = nd(rng);
  }
  const auto& cfg = nets.config();
  PolicySample s = squashed_sample(head, noise, cfg.logvar_min, cfg.logvar_max);
  ActionSet out;
  out.mean = to_vector(head.value().col(0));
  out.logvar = to_vector(head.value().col(1).cwiseMax(cfg.logvar_min).cwiseMin(cfg.logvar_max));
  out.pre_squash = to_vector(s.pre_squash.value());
  out.action = to_vector(s.action.value());
  out.log_density = to_vector(s.log_density.value());
  // Keep actions strictly inside (0, 1) even where the sigmoid saturates.
  constexpr double tiny = 1e-12;
  for (double& a : out.action) a = std::clamp(a, tiny, 1.0 - tiny);
  return out;
}

std::vector<double> coverage_weights(const EnvImage& img) {
  std::vector<double> count(static_cast<std::size_t>(img.rag.num_edges()), 0.0);
  for (const auto& subs : img.subgraphs)
    for (const rag::SubGraph& sg : subs)
      for (int e : sg.edges) count[static_cast<std::size_t>(e)] += 1.0;
  for (double& c : count) c = c > 0 ? 1.0 / c : 1.0;
  return count;
}

ad::Var actor_loss(ad::Var log_density, std::span<const ad::Var> q, const EnvImage& img, double alpha,
                   std::span<const double> edge_weights) {
  if (q.size() != img.subgraphs.size())
    throw std::invalid_argument("actor_loss: " + std::to_string(q.size()) + " Q columns for " +
                                std::to_string(img.subgraphs.size()) + " subgraph sizes");
  ad::Tape& t = log_density.tape();
  ad::Var lp = log_density;
  if (!edge_weights.empty()) lp = ad::mul(lp, t.constant(column(edge_weights)));
  std::vector<ad::Var> terms;
  for (std::size_t k = 0; k < q.size(); ++k) {
    const auto& subs = img.subgraphs[k];
    if (subs.empty()) continue;
    std::vector<int> flat;
    for (const rag::SubGraph& sg : subs) flat.insert(flat.end(), sg.edges.begin(), sg.edges.end());
    ad::Var per_sg = ad::sum(ad::reshape(ad::gather_rows(lp, flat), static_cast<ad::Index>(subs.size()),
                                         static_cast<ad::Index>(img.sizes[k])),
                             1);
    terms.push_back(per_sg * alpha - q[k]);
  }
  if (terms.empty()) return t.constant(ad::Matrix::Zero(1, 1));
  return ad::mean(ad::concat_rows(terms));
}

ad::Var critic_loss(std::span<const ad::Var> q, const rewards::RewardVector& r) {
  if (q.size() != r.per_size.size())
    throw std::invalid_argument("critic_loss: " + std::to_string(q.size()) + " Q columns for " +
                                std::to_string(r.per_size.size()) + " reward lists");
  if (q.empty()) throw std::invalid_argument("critic_loss: nothing to regress");
  ad::Tape& t = q.front().tape();
  std::vector<ad::Var> diffs;
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (q[k].rows() != static_cast<ad::Index>(r.per_size[k].size()))
      throw std::invalid_argument("critic_loss: " + std::to_string(q[k].rows()) + " Q values for " +
                                  std::to_string(r.per_size[k].size()) + " rewards");
    if (r.per_size[k].empty()) continue;
    diffs.push_back(q[k] - t.constant(column(r.per_size[k])));
  }
  if (diffs.empty()) return t.constant(ad::Matrix::Zero(1, 1));
  return ad::mean(ad::square(ad::concat_rows(diffs))) * 0.5;
}

double temperature_update(ad::ParameterSet& alpha_params, double mean_log_density, double target_entropy,
                          double lr) {
  ad::Tape t;
  ad::Var log_alpha = t.param(alpha_params.at("log_alpha"));
  ad::Var loss = ad::exp(log_alpha) * (-(mean_log_density + target_entropy));
  t.backward(loss);
  ad::adam_step(alpha_params, lr, 0.9, 0.999, 1e-8);
  return loss.scalar();
}

void ReplayBuffer::push(ReplayEntry e) {
  entries_.push_back(std::move(e));
  while (entries_.size() > capacity_) entries_.pop_front();
}

std::vector<const ReplayEntry*> ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
  if (entries_.empty()) throw std::logic_error("replay buffer is empty");
  std::uniform_int_distribution<std::size_t> pick(0, entries_.size() - 1);
  std::vector<const ReplayEntry*> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(&entries_[pick(rng)]);
  return out;
}

LossReport train_step(Networks& nets, std::span<const EnvImage> images, std::span<const ReplayEntry* const> batch,
                      std::uint64_t seed, bool update_actor) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const AgentConfig& cfg = nets.config();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  LossReport rep;
  rep.mean_reward_per_size.assign(cfg.subgraph_sizes.size(), 0.0);
  std::vector<int> size_hits(cfg.subgraph_sizes.size(), 0);

  auto fail = [&](const std::string& what, const ReplayEntry& e) {
    std::ostringstream os;
    os << "non-finite " << what << " on image " << images[static_cast<std::size_t>(e.image)].id << " (actions:";
    for (double a : e.actions) os << ' ' << a;
    os << ")";
    throw std::runtime_error(os.str());
  };

  // The actor sees the node features of the critic pass as constants.
  std::vector<ad::Matrix> detached;
  detached.reserve(batch.size());
  nets.critic_params().zero_grad();
  for (const ReplayEntry* e : batch) {
    const EnvImage& img = images[static_cast<std::size_t>(e->image)];
    ad::Tape t;
    ad::Var feats = nets.node_features(t, img, true);
    detached.push_back(feats.value());
    ad::Var a = t.constant(column(e->actions));
    auto q = nets.critic_q(img, feats, a, true);
    ad::Var loss = critic_loss(q, e->rewards);
    if (!std::isfinite(loss.scalar())) fail("critic loss", *e);
    rep.critic_loss += loss.scalar() * inv_b;
    t.backward(loss * inv_b);
    rep.mean_reward += e->rewards.mean() * inv_b;
    for (std::size_t k = 0; k < img.sizes.size(); ++k) {
      for (std::size_t s = 0; s < cfg.subgraph_sizes.size(); ++s) {
        if (cfg.subgraph_sizes[s] != img.sizes[k] || e->rewards.per_size[k].empty()) continue;
        double m = 0.0;
        for (double r : e->rewards.per_size[k]) m += r;
        rep.mean_reward_per_size[s] += m / static_cast<double>(e->rewards.per_size[k].size());
        ++size_hits[s];
      }
    }
  }
  ad::adam_step(nets.critic_params(), cfg.critic_lr, 0.9, 0.999, 1e-8);
  for (std::size_t s = 0; s < size_hits.size(); ++s)
    rep.mean_reward_per_size[s] = size_hits[s] ? rep.mean_reward_per_size[s] / size_hits[s]
                                               : std::numeric_limits<double>::quiet_NaN();

  rep.alpha = nets.alpha();
  if (!update_actor) return rep;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  double lp_total = 0.0;
  std::size_t lp_count = 0;
  nets.actor_params().zero_grad();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const ReplayEntry* e = batch[b];
    const EnvImage& img = images[static_cast<std::size_t>(e->image)];
    ad::Tape t;
    ad::Var feats = t.constant(std::move(detached[b]));
    ad::Var head = nets.actor_head(img, feats, true);
    ad::Matrix noise(head.rows(), 1);
    for (ad::Index i = 0; i < noise.rows(); ++i) noise(i, 0) = nd(rng);
    PolicySample s = squashed_sample(head, noise, cfg.logvar_min, cfg.logvar_max);
    auto q = nets.critic_q(img, feats, s.action, false);
    const std::vector<double> w = cfg.overlap_normalization ? coverage_weights(img) : std::vector<double>{};
    ad::Var loss = actor_loss(s.log_density, q, img, rep.alpha, w);
    if (!std::isfinite(loss.scalar())) fail("actor loss", *e);
    rep.actor_loss += loss.scalar() * inv_b;
    t.backward(loss * inv_b);
    lp_total += s.log_density.value().sum();
    lp_count += static_cast<std::size_t>(s.log_density.rows());
  }
  ad::adam_step(nets.actor_params(), cfg.actor_lr, 0.9, 0.999, 1e-8);

  const double mean_lp = lp_count ? lp_total / static_cast<double>(lp_count) : 0.0;
  rep.alpha_loss = temperature_update(nets.alpha_params(), mean_lp, cfg.target_entropy, cfg.alpha_lr);
  rep.alpha = nets.alpha();
  return rep;
}

partitioning::Partition segment(const EnvImage& img, std::span<const double> actions) {
  return partitioning::solve_multicut(partitioning::actions_to_costs(img.rag.topology, actions));
}

ReplayEntry explore_episode(Networks& nets, const EnvImage& img, int image_index, const RewardFn& reward,
                            std::uint64_t seed, bool deterministic, partitioning::Partition* partition_out) {
  ActionSet a = act(nets, img, deterministic, seed);
  partitioning::Partition p = segment(img, a.action);
  ReplayEntry entry;
  entry.image = image_index;
  entry.rewards = reward(img, a.action, p);
  entry.actions = std::move(a.action);
  if (partition_out) *partition_out = std::move(p);
  return entry;
}

}  // namespace priorseg::agent
