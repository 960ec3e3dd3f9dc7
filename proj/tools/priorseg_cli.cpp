// priorseg: data generation, pretraining, training, evaluation, segmentation
// and reward landscapes from the command line.

#include "priorseg/harness.hpp"
#include "priorseg/metrics.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

using namespace priorseg;

namespace {

harness::ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? harness::ExperimentConfig{} : harness::load_config(path);
}

void print_summary(const std::vector<harness::ImageMetrics>& rows) {
  double sbd = 0, vm = 0, vs = 0, rec = 0, r = 0;
  for (const auto& m : rows) {
    sbd += m.sbd;
    vm += m.vi_merge;
    vs += m.vi_split;
    rec += m.recovered;
    r += m.reward;
  }
  const double n = static_cast<double>(rows.size());
  std::cout << "images " << rows.size() << "  sbd " << sbd / n << "  vi_merge " << vm / n << "  vi_split " << vs / n
            << "  recovered " << rec / n << "  reward " << r / n << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prior-driven instance segmentation with a multicut actor-critic"};
  app.set_version_flag("--version", harness::kVersion);
  app.require_subcommand(1);

  // gen-data
  harness::DatasetSpec gen;
  std::string gen_out;
  bool gen_force = false;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  g->add_option("--kind", gen.kind, "circles | ring")->check(CLI::IsMember({"circles", "ring"}));
  g->add_option("--count", gen.count, "number of images");
  g->add_option("--size", gen.size, "image side length");
  g->add_option("--seed", gen.seed);
  g->add_option("--min-objects", gen.min_objects);
  g->add_option("--max-objects", gen.max_objects);
  g->add_option("--ring-cells", gen.ring_cells);
  g->add_option("--ring-fraction", gen.ring_fraction);
  g->add_option("--out", gen_out)->required();
  g->add_flag("--force", gen_force, "overwrite a non-empty output directory");

  // pretrain
  std::string pre_config, pre_out, pre_dataset;
  auto* p = app.add_subcommand("pretrain", "Contrastive pretraining of the pixel encoder");
  p->add_option("config", pre_config, "experiment config (.ini)");
  p->add_option("--dataset", pre_dataset, "dataset directory (overrides the config)");
  p->add_option("--out", pre_out)->required();

  // train
  std::string train_config, train_out, train_dataset;
  std::optional<std::uint64_t> train_seed;
  bool quiet = false;
  auto* t = app.add_subcommand("train", "Train the agent");
  t->add_option("config", train_config, "experiment config (.ini)")->required();
  t->add_option("--seed", train_seed);
  t->add_option("--out", train_out, "run directory (default: run.output_dir)");
  t->add_option("--dataset", train_dataset, "dataset directory (overrides the config)");
  t->add_flag("--quiet", quiet);

  // eval
  std::string eval_ckpt, eval_dataset, eval_config, eval_metrics;
  bool eval_oracle = false, eval_ceiling = false;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  e->add_option("--checkpoint", eval_ckpt, "checkpoint stem");
  e->add_option("--dataset", eval_dataset, "dataset directory (default: the checkpoint's dataset spec)");
  e->add_option("--config", eval_config, "config for --ceiling without a checkpoint");
  e->add_option("--metrics", eval_metrics, "metrics CSV path")->required();
  e->add_flag("--oracle", eval_oracle, "act with ground-truth edge labels");
  e->add_flag("--ceiling", eval_ceiling, "superpixel projection of the ground truth");

  // segment
  std::string seg_ckpt, seg_image, seg_sp, seg_out, seg_edges;
  auto* s = app.add_subcommand("segment", "Segment one image");
  s->add_option("--checkpoint", seg_ckpt)->required();
  s->add_option("--image", seg_image, "8-bit PGM")->required()->check(CLI::ExistingFile);
  s->add_option("--superpixels", seg_sp, "LBL1 label map (default: computed)");
  s->add_option("--out", seg_out, "LBL1 label map output")->required();
  s->add_option("--edges", seg_edges, "edge decision CSV output")->required();

  // reward-surface
  std::string rs_suite = "circles", rs_out, rs_config;
  int rs_steps = 21, rs_max = 10, rs_size = 64;
  double rs_fraction = 0.3, rs_object = 1.0;
  auto* r = app.add_subcommand("reward-surface", "Tabulate a reward landscape");
  r->add_option("--suite", rs_suite)->check(CLI::IsMember({"circles", "ring"}));
  r->add_option("--config", rs_config, "take reward parameters from this config");
  r->add_option("--steps", rs_steps, "grid resolution per continuous axis");
  r->add_option("--max-predicted", rs_max, "largest object count (circles)");
  r->add_option("--size", rs_size, "image size (ring)");
  r->add_option("--ring-fraction", rs_fraction);
  r->add_option("--object-reward", rs_object, "object rewards on both sides of the edge (ring)");
  r->add_option("--out", rs_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*g) {
      harness::ExperimentConfig probe;
      probe.dataset = gen;
      probe.validate();
      const auto data = harness::generate_dataset(gen);
      harness::write_dataset(gen_out, data, gen, gen_force);
      std::cout << "wrote " << data.samples.size() << " " << gen.kind << " images to " << gen_out << "\n";
    } else if (*p) {
      auto cfg = config_or_default(pre_config);
      if (!pre_dataset.empty()) cfg.dataset.dir = pre_dataset;
      const auto data = harness::load_dataset(cfg.dataset);
      const auto rep = harness::run_pretraining(cfg, data, pre_out);
      std::cout << "loss " << rep.initial_loss << " -> " << rep.final_loss << "\n"
                << "held-out intra/inter distance before " << rep.heldout_before.intra << " / "
                << rep.heldout_before.inter << ", after " << rep.heldout_after.intra << " / "
                << rep.heldout_after.inter << "\n"
                << "encoder: " << (std::filesystem::path(pre_out) / "encoder").string() << "\n";
    } else if (*t) {
      auto cfg = harness::load_config(train_config);
      if (train_seed) cfg.seed = cfg.agent.seed = *train_seed;
      if (!train_dataset.empty()) cfg.dataset.dir = train_dataset;
      const std::string out = train_out.empty() ? cfg.output_dir : train_out;
      const auto data = harness::load_dataset(cfg.dataset);
      const auto res = harness::run_training(cfg, data, out, quiet ? nullptr : &std::cout);
      std::cout << "best held-out reward " << res.best_reward << " (step 0: " << res.step0_reward << ")\n"
                << "best checkpoint " << res.best_checkpoint << "\n";
    } else if (*e) {
      std::vector<harness::ImageMetrics> rows;
      if (eval_ceiling) {
        auto cfg = eval_ckpt.empty() ? config_or_default(eval_config) : harness::load_agent(eval_ckpt).config;
        if (!eval_dataset.empty()) cfg.dataset.dir = eval_dataset;
        rows = harness::projection_ceiling(harness::load_dataset(cfg.dataset), cfg.superpixels);
      } else {
        if (eval_ckpt.empty()) throw std::invalid_argument("eval needs --checkpoint (or --ceiling)");
        auto agent = harness::load_agent(eval_ckpt);
        harness::DatasetSpec spec = agent.config.dataset;
        if (!eval_dataset.empty()) spec.dir = eval_dataset;
        rows = harness::evaluate(agent, harness::load_dataset(spec), {eval_oracle});
      }
      harness::write_metrics_csv(eval_metrics, rows);
      print_summary(rows);
    } else if (*s) {
      auto agent = harness::load_agent(seg_ckpt);
      const auto image = imaging::read_pgm(seg_image);
      const imaging::LabelMap sp = seg_sp.empty() ? imaging::LabelMap() : imaging::read_labels(seg_sp);
      const auto res = harness::segment_image(agent, image, sp);
      imaging::write_labels(seg_out, res.labels);
      harness::write_edge_csv(seg_edges, res);
      std::cout << imaging::num_labels(imaging::compact_labels(res.labels)) << " segments from "
                << res.edges.size() << " superpixel edges\n";
    } else if (*r) {
      const auto cfg = config_or_default(rs_config);
      harness::write_reward_surface(rs_out, rs_suite, cfg.reward, rs_steps, rs_max, rs_size, rs_fraction, rs_object);
      std::cout << "wrote " << rs_out << "\n";
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
