#include "priorseg/harness.hpp"
#include "priorseg/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace priorseg::harness {
namespace {

std::string num(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string step_stem(const fs::path& dir, int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06d", step);
  return (dir / buf).string();
}

void remove_checkpoint(const std::string& stem) {
  for (const char* ext : {".manifest", ".bin", ".ini"}) fs::remove(stem + ext);
}

std::vector<int> encoder_channels(const pretrain::PretrainConfig& p) {
  std::vector<int> c = p.hidden_channels;
  c.push_back(p.embedding.dim);
  return c;
}

bool suite_uses_truth(const std::string& suite) { return suite == "supervised-dice" || suite == "mixed"; }

void attach_truth(agent::EnvImage& img, const imaging::LabelMap& truth) {
  img.gt_edges = rewards::ground_truth_edge_labels(*img.rag.superpixels, truth, img.rag.topology);
}

std::vector<agent::EnvImage> subset(const std::vector<agent::EnvImage>& all, const std::vector<int>& idx) {
  std::vector<agent::EnvImage> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(all[static_cast<std::size_t>(i)]);
  return out;
}

double heldout_reward(agent::Networks& nets, const std::vector<agent::EnvImage>& imgs, const agent::RewardFn& reward) {
  double total = 0.0;
  for (std::size_t i = 0; i < imgs.size(); ++i)
    total += agent::explore_episode(nets, imgs[i], static_cast<int>(i), reward, 0, true).rewards.mean();
  return imgs.empty() ? 0.0 : total / static_cast<double>(imgs.size());
}

void dump_batch(const fs::path& path, const std::vector<agent::EnvImage>& imgs,
                const std::vector<const agent::ReplayEntry*>& batch, int step, const std::string& what) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["error"] = what;
  for (const agent::ReplayEntry* e : batch) {
    nlohmann::ordered_json b;
    b["image"] = imgs[static_cast<std::size_t>(e->image)].id;
    b["actions"] = e->actions;
    b["rewards"] = e->rewards.per_size;
    j["batch"].push_back(b);
  }
  write_text(path, j.dump(2) + "\n");
}

ImageMetrics score(int image, const imaging::LabelMap& segmentation, const imaging::LabelMap& truth) {
  ImageMetrics m;
  m.image = image;
  const imaging::LabelMap inst = metrics::to_instance_map(segmentation);
  m.sbd = metrics::symmetric_best_dice(inst, truth);
  const auto vi = metrics::variation_of_information(inst, truth, false);
  m.vi_merge = vi.merge;
  m.vi_split = vi.split;
  const auto vi_fg = metrics::variation_of_information(inst, truth, true);
  m.vi_merge_fg = vi_fg.merge;
  m.vi_split_fg = vi_fg.split;
  m.recovered = metrics::recovered_fraction(inst, truth);
  return m;
}

}  // namespace

// --- pretraining --------------------------------------------------------------------

PretrainReport run_pretraining(const ExperimentConfig& cfg, const Dataset& data, const std::string& out_dir) {
  const Split split = split_dataset(static_cast<int>(data.samples.size()), cfg.training.heldout_fraction);
  const auto sp = compute_superpixels(data, cfg.superpixels);
  std::vector<pretrain::PretrainItem> items(data.samples.size());
  parallel_for(static_cast<int>(items.size()), [&](int i) {
    const auto k = static_cast<std::size_t>(i);
    items[k] = pretrain::make_pretrain_item(data.samples[k].image, sp[k], cfg.superpixels.sigma);
  });
  std::vector<pretrain::PretrainItem> train, held;
  for (int i : split.train) train.push_back(items[static_cast<std::size_t>(i)]);
  for (int i : split.heldout) held.push_back(items[static_cast<std::size_t>(i)]);

  auto stats = [&](const pretrain::ConvEncoder& enc) {
    pretrain::DistanceStats s;
    for (const auto& it : held) {
      const auto nb = pretrain::conv_neighbourhood(static_cast<int>(it.superpixels.rows()),
                                                   static_cast<int>(it.superpixels.cols()));
      const auto d = pretrain::embedding_distance_stats(enc.evaluate(it.input, nb), it.superpixels, it.topology);
      s.intra += d.intra / static_cast<double>(held.size());
      s.inter += d.inter / static_cast<double>(held.size());
    }
    return s;
  };

  PretrainReport rep;
  {
    ad::ParameterSet init;
    const auto enc = pretrain::ConvEncoder::create(init, "encoder/", 2, encoder_channels(cfg.pretrain), cfg.pretrain.seed);
    rep.heldout_before = stats(enc);
    rep.initial_loss = pretrain::mean_loss(enc, train, cfg.pretrain.embedding);
  }
  const pretrain::PretrainResult res = pretrain::pretrain_features(train, cfg.pretrain);
  rep.epoch_losses = res.epoch_losses;
  rep.final_loss = res.final_loss;
  rep.heldout_after = stats(res.encoder);

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  ad::Checkpoint ckpt;
  ad::export_params(*res.params, "", ckpt, false);
  ad::write_checkpoint((dir / "encoder").string(), ckpt);
  write_text(dir / "encoder.ini", to_ini(cfg));
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    const auto nb = pretrain::conv_neighbourhood(static_cast<int>(it.superpixels.rows()),
                                                 static_cast<int>(it.superpixels.cols()));
    char name[32];
    std::snprintf(name, sizeof name, "features_%04zu.fea", i);
    imaging::write_features((dir / name).string(),
                            imaging::pool_node_features(res.encoder.evaluate(it.input, nb), it.superpixels));
  }
  std::ostringstream log;
  log << "epoch,loss\n";
  for (std::size_t e = 0; e < rep.epoch_losses.size(); ++e) log << e << ',' << num(rep.epoch_losses[e]) << '\n';
  write_text(dir / "pretrain_log.csv", log.str());
  nlohmann::ordered_json m;
  m["version"] = kVersion;
  m["initial_loss"] = rep.initial_loss;
  m["final_loss"] = rep.final_loss;
  m["heldout_intra_before"] = rep.heldout_before.intra;
  m["heldout_inter_before"] = rep.heldout_before.inter;
  m["heldout_intra_after"] = rep.heldout_after.intra;
  m["heldout_inter_after"] = rep.heldout_after.inter;
  write_text(dir / "pretrain_manifest.json", m.dump(2) + "\n");
  return rep;
}

pretrain::ConvEncoder load_encoder(const std::string& stem, const ExperimentConfig& cfg, ad::ParameterSet& params) {
  const ad::Checkpoint ckpt = ad::read_checkpoint(stem);
  auto enc = pretrain::ConvEncoder::create(params, "encoder/", 2, encoder_channels(cfg.pretrain), cfg.pretrain.seed);
  ad::import_params(params, "", ckpt);
  return enc;
}

// --- training ------------------------------------------------------------------------

std::vector<agent::EnvImage> prepare_images(const ExperimentConfig& cfg, const Dataset& data,
                                            const std::vector<imaging::LabelMap>& superpixels,
                                            const pretrain::ConvEncoder* frozen) {
  if (superpixels.size() != data.samples.size())
    throw std::invalid_argument("prepare_images: superpixel count differs from the dataset");
  std::vector<agent::EnvImage> out(data.samples.size());
  parallel_for(static_cast<int>(out.size()), [&](int i) {
    const auto k = static_cast<std::size_t>(i);
    out[k] = agent::prepare_image(i, data.samples[k].image, superpixels[k], cfg.agent, frozen, cfg.seed);
  });
  return out;
}

TrainResult run_training(const ExperimentConfig& cfg, const Dataset& data, const std::string& out_dir,
                         std::ostream* progress, const std::function<bool(const EvalRecord&)>& stop) {
  cfg.validate();
  const TrainingConfig& tc = cfg.training;
  const Split split = split_dataset(static_cast<int>(data.samples.size()), tc.heldout_fraction);
  const fs::path dir(out_dir);
  const fs::path ckpt_dir = dir / "checkpoints";
  fs::create_directories(ckpt_dir);
  write_text(dir / "config.ini", to_ini(cfg));

  ad::ParameterSet encoder_params;
  pretrain::ConvEncoder frozen;
  const bool pretrained = cfg.agent.feature_mode == agent::FeatureMode::pretrained;
  if (pretrained) frozen = load_encoder(tc.pretrained_encoder, cfg, encoder_params);

  const auto sp = compute_superpixels(data, cfg.superpixels);
  const auto all = prepare_images(cfg, data, sp, pretrained ? &frozen : nullptr);
  std::vector<agent::EnvImage> train = subset(all, split.train);
  const std::vector<agent::EnvImage> held = subset(all, split.heldout);
  // Ground truth only enters through the supervised reward on training images.
  if (cfg.reward_suite == "supervised-dice") {
    for (std::size_t k = 0; k < train.size(); ++k) {
      attach_truth(train[k], data.samples[static_cast<std::size_t>(split.train[k])].truth);
      train[k].supervised = true;
    }
  } else if (cfg.reward_suite == "mixed") {
    if (tc.supervised_image < 0 || tc.supervised_image >= static_cast<int>(train.size()))
      throw std::invalid_argument("training.supervised_image is not a training image");
    const auto k = static_cast<std::size_t>(tc.supervised_image);
    attach_truth(train[k], data.samples[static_cast<std::size_t>(split.train[k])].truth);
    train[k].supervised = true;
  }
  // Held-out selection stays reward-only; the Dice suite can only be judged
  // against edge labels, so those are attached for that suite alone.
  std::vector<agent::EnvImage> held_eval = held;
  if (cfg.reward_suite == "supervised-dice")
    for (std::size_t k = 0; k < held_eval.size(); ++k) {
      attach_truth(held_eval[k], data.samples[static_cast<std::size_t>(split.heldout[k])].truth);
      held_eval[k].supervised = true;
    }
  const agent::RewardFn reward = agent::make_reward_fn(cfg.reward_suite, cfg.reward, cfg.dataset.ring_fraction);
  const agent::RewardFn held_reward =
      cfg.reward_suite == "mixed" ? agent::make_reward_fn("circles", cfg.reward) : reward;

  const int node_dim = agent::node_feature_dim(cfg.agent, pretrained ? frozen.out_dim() : 0);
  agent::Networks nets(cfg.agent, node_dim);
  agent::ReplayBuffer buffer(static_cast<std::size_t>(cfg.agent.buffer_capacity));
  std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 1);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(train.size()) - 1);

  std::ofstream train_log(dir / "train_log.csv", std::ios::binary);
  std::ofstream eval_log(dir / "eval_log.csv", std::ios::binary);
  train_log << "step,critic_loss,actor_loss,alpha_loss,alpha,batch_reward,episode_reward\n";
  eval_log << "step,heldout_reward,checkpoint\n";

  TrainResult result;
  std::vector<std::string> periodic;
  auto save = [&](int step) {
    const std::string stem = step_stem(ckpt_dir, step);
    ad::Checkpoint ckpt;
    nets.save(ckpt);
    if (pretrained) ad::export_params(encoder_params, "pretrained/", ckpt, false);
    ad::write_checkpoint(stem, ckpt);
    write_text(stem + ".ini", to_ini(cfg));
    return stem;
  };
  auto evaluate_now = [&](int step) {
    EvalRecord rec;
    rec.step = step;
    rec.heldout_reward = heldout_reward(nets, held_eval, held_reward);
    rec.checkpoint = save(step);
    eval_log << step << ',' << num(rec.heldout_reward) << ',' << fs::path(rec.checkpoint).filename().string() << '\n';
    eval_log.flush();
    result.evals.push_back(rec);
    const int idx = static_cast<int>(result.evals.size()) - 1;
    if (result.best_index < 0 || rec.heldout_reward > result.best_reward) {
      result.best_index = idx;
      result.best_reward = rec.heldout_reward;
      result.best_checkpoint = rec.checkpoint;
    }
    periodic.push_back(rec.checkpoint);
    // Keep the newest keep_checkpoints files plus the best one.
    auto others = [&] {
      return std::count_if(periodic.begin(), periodic.end(),
                           [&](const std::string& s) { return s != result.best_checkpoint; });
    };
    while (others() > tc.keep_checkpoints) {
      auto victim = std::find_if(periodic.begin(), periodic.end(),
                                 [&](const std::string& s) { return s != result.best_checkpoint; });
      remove_checkpoint(*victim);
      for (auto& e : result.evals)
        if (e.checkpoint == *victim) e.checkpoint.clear();
      periodic.erase(victim);
    }
    if (progress)
      *progress << "step " << step << " held-out reward " << rec.heldout_reward << " (best " << result.best_reward
                << " at step " << result.evals[static_cast<std::size_t>(result.best_index)].step << ")" << std::endl;
  };

  evaluate_now(0);
  result.step0_reward = result.evals.front().heldout_reward;

  int step = 0;
  while (step < tc.steps) {
    const int i = pick(rng);
    agent::ReplayEntry entry = agent::explore_episode(nets, train[static_cast<std::size_t>(i)], i, reward, rng());
    const double episode_reward = entry.rewards.mean();
    buffer.push(std::move(entry));
    if (buffer.size() < static_cast<std::size_t>(cfg.agent.batch_size)) continue;
    const auto batch = buffer.sample(static_cast<std::size_t>(cfg.agent.batch_size), rng);
    agent::LossReport rep;
    try {
      rep = agent::train_step(nets, train, batch, rng());
    } catch (const std::runtime_error& e) {
      dump_batch(dir / "diagnostic.json", train, batch, step + 1, e.what());
      throw std::runtime_error(std::string(e.what()) + " at step " + std::to_string(step + 1) + "; batch dumped to " +
                               (dir / "diagnostic.json").string());
    }
    ++step;
    if (step % tc.log_every == 0 || step == tc.steps)
      train_log << step << ',' << num(rep.critic_loss) << ',' << num(rep.actor_loss) << ',' << num(rep.alpha_loss)
                << ',' << num(rep.alpha) << ',' << num(rep.mean_reward) << ',' << num(episode_reward) << std::endl;
    if (step % tc.eval_every == 0 || step == tc.steps) {
      evaluate_now(step);
      if (stop && stop(result.evals.back())) break;
    }
  }
  train_log.flush();

  nlohmann::ordered_json m;
  m["version"] = kVersion;
  m["config"] = to_ini(cfg);
  m["seed"] = cfg.seed;
  m["steps"] = step;
  m["step0_reward"] = result.step0_reward;
  for (const EvalRecord& e : result.evals) {
    nlohmann::ordered_json r;
    r["step"] = e.step;
    r["heldout_reward"] = e.heldout_reward;
    r["checkpoint"] = e.checkpoint.empty() ? nlohmann::json(nullptr)
                                           : nlohmann::json(fs::path(e.checkpoint).filename().string());
    m["evaluations"].push_back(r);
  }
  m["best"] = {{"step", result.evals[static_cast<std::size_t>(result.best_index)].step},
               {"heldout_reward", result.best_reward},
               {"checkpoint", fs::path(result.best_checkpoint).filename().string()}};
  write_text(dir / "run_manifest.json", m.dump(2) + "\n");
  return result;
}

LoadedAgent load_agent(const std::string& stem) {
  LoadedAgent a;
  a.config = parse_config(read_text(stem + ".ini"));
  const ad::Checkpoint ckpt = ad::read_checkpoint(stem);
  int pretrained_dim = 0;
  if (a.config.agent.feature_mode == agent::FeatureMode::pretrained) {
    a.encoder_params = std::make_unique<ad::ParameterSet>();
    a.encoder = pretrain::ConvEncoder::create(*a.encoder_params, "encoder/", 2, encoder_channels(a.config.pretrain),
                                              a.config.pretrain.seed);
    ad::import_params(*a.encoder_params, "pretrained/", ckpt);
    pretrained_dim = a.encoder.out_dim();
  }
  a.nets = std::make_unique<agent::Networks>(a.config.agent, agent::node_feature_dim(a.config.agent, pretrained_dim));
  a.nets->load(ckpt);
  return a;
}

// --- evaluation -----------------------------------------------------------------------

std::vector<ImageMetrics> evaluate(LoadedAgent& la, const Dataset& data, const EvalOptions& opts) {
  if (data.samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const ExperimentConfig& cfg = la.config;
  const auto sp = compute_superpixels(data, cfg.superpixels);
  auto imgs = prepare_images(cfg, data, sp, la.encoder_params ? &la.encoder : nullptr);
  const bool need_truth = opts.oracle || suite_uses_truth(cfg.reward_suite);
  for (std::size_t i = 0; i < imgs.size(); ++i)
    if (need_truth) {
      attach_truth(imgs[i], data.samples[i].truth);
      imgs[i].supervised = cfg.reward_suite == "supervised-dice";
    }
  const agent::RewardFn reward = agent::make_reward_fn(cfg.reward_suite == "mixed" ? "circles" : cfg.reward_suite,
                                                       cfg.reward, cfg.dataset.ring_fraction);
  std::vector<ImageMetrics> rows(imgs.size());
  // The networks are only read here, never updated.
  parallel_for(static_cast<int>(imgs.size()), [&](int i) {
    const auto k = static_cast<std::size_t>(i);
    std::vector<double> actions = opts.oracle ? imgs[k].gt_edges : agent::act(*la.nets, imgs[k], true, 0).action;
    if (opts.oracle)
      for (double& a : actions) a = std::clamp(a, 1e-6, 1.0 - 1e-6);
    const partitioning::Partition p = agent::segment(imgs[k], actions);
    rows[k] = score(i, partitioning::partition_to_labelmap(p, *imgs[k].rag.superpixels), data.samples[k].truth);
    rows[k].reward = reward(imgs[k], actions, p).mean();
  });
  return rows;
}

std::vector<ImageMetrics> projection_ceiling(const Dataset& data, const imaging::SuperpixelParams& params) {
  if (data.samples.empty()) throw std::invalid_argument("projection_ceiling: empty dataset");
  const auto sp = compute_superpixels(data, params);
  std::vector<ImageMetrics> rows(data.samples.size());
  parallel_for(static_cast<int>(rows.size()), [&](int i) {
    const auto k = static_cast<std::size_t>(i);
    const imaging::LabelMap proj = metrics::project_to_superpixels(sp[k], data.samples[k].truth);
    ImageMetrics m;
    m.image = i;
    m.sbd = metrics::symmetric_best_dice(proj, data.samples[k].truth);
    const auto vi = metrics::variation_of_information(proj, data.samples[k].truth, false);
    m.vi_merge = vi.merge;
    m.vi_split = vi.split;
    const auto vi_fg = metrics::variation_of_information(proj, data.samples[k].truth, true);
    m.vi_merge_fg = vi_fg.merge;
    m.vi_split_fg = vi_fg.split;
    m.recovered = metrics::recovered_fraction(proj, data.samples[k].truth);
    rows[k] = m;
  });
  return rows;
}

void write_metrics_csv(const std::string& path, const std::vector<ImageMetrics>& rows) {
  std::ostringstream out;
  out << "image,sbd,vi_merge,vi_split,vi_merge_fg,vi_split_fg,recovered,reward\n";
  auto fields = [](const ImageMetrics& m) {
    return std::array<double, 7>{m.sbd, m.vi_merge, m.vi_split, m.vi_merge_fg, m.vi_split_fg, m.recovered, m.reward};
  };
  std::array<double, 7> mean{}, sq{};
  for (const ImageMetrics& m : rows) {
    const auto f = fields(m);
    out << m.image;
    for (std::size_t c = 0; c < f.size(); ++c) {
      out << ',' << num(f[c]);
      mean[c] += f[c];
    }
    out << '\n';
  }
  const double n = static_cast<double>(std::max<std::size_t>(rows.size(), 1));
  for (double& v : mean) v /= n;
  for (const ImageMetrics& m : rows) {
    const auto f = fields(m);
    for (std::size_t c = 0; c < f.size(); ++c) sq[c] += (f[c] - mean[c]) * (f[c] - mean[c]);
  }
  out << "mean";
  for (double v : mean) out << ',' << num(v);
  out << "\nstd";
  for (double v : sq) out << ',' << num(std::sqrt(v / n));
  out << '\n';
  write_text(path, out.str());
}

// --- segmentation -------------------------------------------------------------------------

SegmentResult segment_image(LoadedAgent& la, const imaging::Image& image, const imaging::LabelMap& superpixels) {
  const ExperimentConfig& cfg = la.config;
  imaging::LabelMap sp = superpixels.size() ? superpixels : imaging::mws_superpixels(image, cfg.superpixels);
  if (sp.rows() != image.rows() || sp.cols() != image.cols())
    throw std::invalid_argument("segment: superpixels and image differ in shape");
  const agent::EnvImage img =
      agent::prepare_image(0, image, sp, cfg.agent, la.encoder_params ? &la.encoder : nullptr, cfg.seed);
  SegmentResult r;
  r.superpixels = *img.rag.superpixels;
  r.edges = img.rag.topology.edges;
  if (img.rag.num_edges() > 0) r.actions = agent::act(*la.nets, img, true, 0).action;
  const partitioning::Partition p = agent::segment(img, r.actions);
  r.labels = partitioning::partition_to_labelmap(p, r.superpixels);
  return r;
}

void write_edge_csv(const std::string& path, const SegmentResult& r) {
  std::ostringstream out;
  out << "node_a,node_b,action,decision\n";
  for (std::size_t e = 0; e < r.edges.size(); ++e)
    out << r.edges[e].first << ',' << r.edges[e].second << ',' << num(r.actions[e]) << ','
        << (r.actions[e] > 0.5 ? "merge" : "cut") << '\n';
  write_text(path, out.str());
}

// --- reward landscapes -------------------------------------------------------------------

void write_reward_surface(const std::string& path, const std::string& suite, const rewards::RewardConfig& cfg,
                          int steps, int max_predicted, int image_size, double ring_fraction, double object_reward) {
  if (steps < 2) throw std::invalid_argument("reward surface needs at least 2 steps");
  std::ostringstream out;
  if (suite == "circles") {
    if (max_predicted < 1) throw std::invalid_argument("reward surface needs max_predicted >= 1");
    out << "cht,predicted,reward\n";
    for (const auto& p : rewards::circles_reward_surface(steps, max_predicted, cfg))
      out << num(p.cht) << ',' << p.predicted << ',' << num(p.reward) << '\n';
  } else if (suite == "ring") {
    rewards::RewardConfig c = cfg;
    c.set_ring_geometry(image_size, image_size, ring_fraction);
    out << "distance,action,reward\n";
    for (int i = 0; i < steps; ++i) {
      const double h = c.max_center_distance * i / (steps - 1);
      for (int k = 0; k < steps; ++k) {
        const double a = static_cast<double>(k) / (steps - 1);
        out << num(h) << ',' << num(a) << ',' << num(rewards::ring_edge_reward_at(h, a, object_reward, object_reward, c))
            << '\n';
      }
    }
  } else {
    throw std::invalid_argument("reward surface suite must be circles or ring");
  }
  write_text(path, out.str());
}

}  // namespace priorseg::harness
