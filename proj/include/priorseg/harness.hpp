#pragma once

// Experiment configuration, datasets on disk, and the train / eval / segment
// drivers behind the command line tool.

#include "priorseg/agent.hpp"
#include "priorseg/imaging.hpp"
#include "priorseg/pretrain.hpp"
#include "priorseg/rewards.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace priorseg::harness {

inline constexpr const char* kVersion = "priorseg 0.1.0";

// --- parallelism ----------------------------------------------------------------

/// PRIORSEG_THREADS if set to a positive integer, else the hardware concurrency.
int thread_count();
/// Runs fn(0..n-1) on up to thread_count() threads; each index runs exactly once.
void parallel_for(int n, const std::function<void(int)>& fn);

// --- configuration ----------------------------------------------------------------

struct DatasetSpec {
  std::string kind = "circles";  ///< circles | ring
  std::string dir;               ///< read from here when non-empty instead of generating
  int count = 32;
  int size = 64;
  int min_objects = 3;
  int max_objects = 5;
  int ring_cells = 8;
  double ring_fraction = 0.3;
  std::uint64_t seed = 7;
};

struct TrainingConfig {
  int steps = 5000;           ///< parameter updates
  int eval_every = 250;       ///< held-out evaluation and checkpoint cadence
  int log_every = 50;
  int keep_checkpoints = 3;   ///< most recent periodic checkpoints kept besides the best one
  double heldout_fraction = 0.2;
  int supervised_image = 0;   ///< training image with Dice reward under the mixed suite
  std::string pretrained_encoder;  ///< checkpoint stem written by the pretrain command
};

struct ExperimentConfig {
  DatasetSpec dataset;
  imaging::SuperpixelParams superpixels;
  agent::AgentConfig agent;
  rewards::RewardConfig reward;
  std::string reward_suite = "circles";
  pretrain::PretrainConfig pretrain;
  TrainingConfig training;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

/// Sectioned key = value text. Unknown sections or keys are errors.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
/// Canonical text form; parse_config(to_ini(c)) reproduces c.
std::string to_ini(const ExperimentConfig& cfg);

// --- datasets ---------------------------------------------------------------------

struct Dataset {
  std::string kind;
  std::vector<imaging::Sample> samples;
};

Dataset generate_dataset(const DatasetSpec& spec);
/// Writes image_NNNN.pgm, labels_NNNN.lbl and manifest.json. A non-empty
/// directory is an error unless force is set.
void write_dataset(const std::string& dir, const Dataset& data, const DatasetSpec& spec, bool force);
Dataset read_dataset(const std::string& dir);
/// read_dataset(spec.dir) when a directory is given, else generate_dataset(spec).
Dataset load_dataset(const DatasetSpec& spec);

struct Split {
  std::vector<int> train;
  std::vector<int> heldout;  ///< the last fraction of images by index
};
Split split_dataset(int count, double heldout_fraction);

/// Superpixels for every sample (parallel over images).
std::vector<imaging::LabelMap> compute_superpixels(const Dataset& data, const imaging::SuperpixelParams& params);

// --- pretraining --------------------------------------------------------------------

struct PretrainReport {
  std::vector<double> epoch_losses;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  pretrain::DistanceStats heldout_before;
  pretrain::DistanceStats heldout_after;
};

/// Trains the contrastive encoder on the training split and writes
/// "<out>/encoder" plus per-image node feature dumps "<out>/features_NNNN.fea".
PretrainReport run_pretraining(const ExperimentConfig& cfg, const Dataset& data, const std::string& out_dir);

/// Loads an encoder written by run_pretraining into params.
pretrain::ConvEncoder load_encoder(const std::string& stem, const ExperimentConfig& cfg, ad::ParameterSet& params);

// --- training ------------------------------------------------------------------------

struct EvalRecord {
  int step = 0;
  double heldout_reward = 0.0;
  std::string checkpoint;  ///< stem, empty once pruned
};

struct TrainResult {
  std::vector<EvalRecord> evals;
  int best_index = -1;
  std::string best_checkpoint;
  double best_reward = 0.0;
  double step0_reward = 0.0;
};

/// Runs the explore / update loop. Never evaluates segmentation metrics.
/// Writes config.ini, train_log.csv, eval_log.csv, checkpoints/ and
/// run_manifest.json under out_dir. Progress lines go to progress if given.
/// When stop returns true for a fresh evaluation, training ends there.
TrainResult run_training(const ExperimentConfig& cfg, const Dataset& data, const std::string& out_dir,
                         std::ostream* progress = nullptr,
                         const std::function<bool(const EvalRecord&)>& stop = {});

/// Everything needed to act with a saved agent.
struct LoadedAgent {
  ExperimentConfig config;
  std::unique_ptr<ad::ParameterSet> encoder_params;
  pretrain::ConvEncoder encoder;  ///< frozen encoder (pretrained mode)
  std::unique_ptr<agent::Networks> nets;
};
/// Reads "<stem>.manifest/.bin" and the config snapshot "<stem>.ini".
LoadedAgent load_agent(const std::string& stem);

/// Builds environment images for the given samples under an agent config.
std::vector<agent::EnvImage> prepare_images(const ExperimentConfig& cfg, const Dataset& data,
                                            const std::vector<imaging::LabelMap>& superpixels,
                                            const pretrain::ConvEncoder* frozen);

// --- evaluation -----------------------------------------------------------------------

struct ImageMetrics {
  int image = 0;
  double sbd = 0.0;
  double vi_merge = 0.0;
  double vi_split = 0.0;
  double vi_merge_fg = 0.0;  ///< background pixels excluded
  double vi_split_fg = 0.0;
  double recovered = 0.0;    ///< fraction of instances matched at IoU >= 0.5
  double reward = 0.0;       ///< mean subgraph reward of the deterministic step
};

struct EvalOptions {
  bool oracle = false;  ///< use ground-truth edge labels as actions
};

/// Deterministic actions -> multicut -> pixel projection -> metrics per image.
std::vector<ImageMetrics> evaluate(LoadedAgent& agent, const Dataset& data, const EvalOptions& opts = {});
/// Superpixel projection of the ground truth (the achievable ceiling) per image.
std::vector<ImageMetrics> projection_ceiling(const Dataset& data, const imaging::SuperpixelParams& params);
/// CSV with a header, one row per image, then "mean" and "std" rows.
void write_metrics_csv(const std::string& path, const std::vector<ImageMetrics>& rows);

// --- segmentation -------------------------------------------------------------------------

struct SegmentResult {
  imaging::LabelMap labels;
  imaging::LabelMap superpixels;
  std::vector<std::pair<int, int>> edges;
  std::vector<double> actions;
};

/// superpixels may be empty, in which case they are computed from the config.
SegmentResult segment_image(LoadedAgent& agent, const imaging::Image& image, const imaging::LabelMap& superpixels);
/// Header "node_a,node_b,action,decision" with decision merge (action > 0.5) or cut.
void write_edge_csv(const std::string& path, const SegmentResult& r);

// --- reward landscapes -------------------------------------------------------------------

/// circles: columns cht,predicted,reward over a cht_steps x max_predicted grid.
/// ring: columns distance,action,reward over [0, m] x [0, 1] with the given
/// object reward.
void write_reward_surface(const std::string& path, const std::string& suite, const rewards::RewardConfig& cfg,
                          int steps, int max_predicted, int image_size, double ring_fraction,
                          double object_reward);

}  // namespace priorseg::harness
