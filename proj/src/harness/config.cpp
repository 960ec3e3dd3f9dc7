#include "priorseg/harness.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace priorseg::harness {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw std::invalid_argument("config: bad value '" + raw + "' for " + key);
  return v;
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("config: bad boolean '" + raw + "' for " + key);
}

std::vector<int> parse_list(const std::string& key, const std::string& raw) {
  std::vector<int> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, item));
  return out;
}

std::string format_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <typename T>
Field number(const char* section, const char* key, T& ref) {
  const std::string name = std::string(section) + "." + key;
  return {section, key, [&ref, name](const std::string& s) { ref = parse_number<T>(name, s); },
          [&ref] { return format_number(ref); }};
}

Field text(const char* section, const char* key, std::string& ref) {
  return {section, key, [&ref](const std::string& s) { ref = trim(s); }, [&ref] { return ref; }};
}

Field list(const char* section, const char* key, std::vector<int>& ref) {
  const std::string name = std::string(section) + "." + key;
  return {section, key, [&ref, name](const std::string& s) { ref = parse_list(name, s); },
          [&ref] { return format_list(ref); }};
}

Field flag(const char* section, const char* key, bool& ref) {
  const std::string name = std::string(section) + "." + key;
  return {section, key, [&ref, name](const std::string& s) { ref = parse_bool(name, s); },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

std::vector<Field> fields(ExperimentConfig& c) {
  auto& a = c.agent;
  auto& r = c.reward;
  auto& d = c.dataset;
  auto& sp = c.superpixels;
  auto& p = c.pretrain;
  auto& t = c.training;
  return {
      number("run", "seed", c.seed),
      text("run", "output_dir", c.output_dir),
      text("run", "reward_suite", c.reward_suite),

      text("dataset", "kind", d.kind),
      text("dataset", "dir", d.dir),
      number("dataset", "count", d.count),
      number("dataset", "size", d.size),
      number("dataset", "min_objects", d.min_objects),
      number("dataset", "max_objects", d.max_objects),
      number("dataset", "ring_cells", d.ring_cells),
      number("dataset", "ring_fraction", d.ring_fraction),
      number("dataset", "seed", d.seed),

      number("superpixels", "sigma", sp.sigma),
      list("superpixels", "offsets", sp.offsets),
      number("superpixels", "stride", sp.stride),
      number("superpixels", "repulsive_bias", sp.repulsive_bias),
      number("superpixels", "min_size", sp.min_size),

      {"agent", "feature_mode", [&a](const std::string& s) { a.feature_mode = agent::parse_feature_mode(trim(s)); },
       [&a] { return agent::to_string(a.feature_mode); }},
      list("agent", "encoder_channels", a.encoder_channels),
      number("agent", "encoder_dim", a.encoder_dim),
      number("agent", "hidden", a.hidden),
      number("agent", "conv_layers", a.conv_layers),
      number("agent", "edge_dim", a.edge_dim),
      number("agent", "critic_hidden", a.critic_hidden),
      list("agent", "subgraph_sizes", a.subgraph_sizes),
      number("agent", "actor_lr", a.actor_lr),
      number("agent", "critic_lr", a.critic_lr),
      number("agent", "alpha_lr", a.alpha_lr),
      number("agent", "init_alpha", a.init_alpha),
      number("agent", "target_entropy", a.target_entropy),
      number("agent", "logvar_min", a.logvar_min),
      number("agent", "logvar_max", a.logvar_max),
      number("agent", "batch_size", a.batch_size),
      number("agent", "buffer_capacity", a.buffer_capacity),
      flag("agent", "overlap_normalization", a.overlap_normalization),

      number("reward", "cht_threshold", r.cht_threshold),
      number("reward", "expected_objects", r.expected_objects),
      number("reward", "theta", r.theta),
      number("reward", "cht_radius_min", r.cht_radius_range.first),
      number("reward", "cht_radius_max", r.cht_radius_range.second),
      number("reward", "bg_inner_scale", r.bg_inner_scale),
      number("reward", "bg_outer_scale", r.bg_outer_scale),
      number("reward", "fg_scale", r.fg_scale),
      number("reward", "box_long", r.box_long),
      number("reward", "box_short", r.box_short),
      number("reward", "box_long_tolerance", r.box_long_tolerance),
      number("reward", "box_short_tolerance", r.box_short_tolerance),
      number("reward", "box_angle_tolerance", r.box_angle_tolerance),

      number("pretrain", "embedding_dim", p.embedding.dim),
      number("pretrain", "delta_v", p.embedding.delta_v),
      number("pretrain", "delta_d", p.embedding.delta_d),
      list("pretrain", "hidden_channels", p.hidden_channels),
      number("pretrain", "lr", p.lr),
      number("pretrain", "epochs", p.epochs),
      number("pretrain", "seed", p.seed),

      number("training", "steps", t.steps),
      number("training", "eval_every", t.eval_every),
      number("training", "log_every", t.log_every),
      number("training", "keep_checkpoints", t.keep_checkpoints),
      number("training", "heldout_fraction", t.heldout_fraction),
      number("training", "supervised_image", t.supervised_image),
      text("training", "pretrained_encoder", t.pretrained_encoder),
  };
}

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset.kind != "circles" && dataset.kind != "ring")
    throw std::invalid_argument("config: dataset.kind must be circles or ring");
  if (dataset.dir.empty()) {
    if (dataset.count < 1) throw std::invalid_argument("config: dataset.count must be >= 1");
    if (dataset.size < 16) throw std::invalid_argument("config: dataset.size must be >= 16");
    if (dataset.min_objects < 1 || dataset.max_objects < dataset.min_objects)
      throw std::invalid_argument("config: need 1 <= dataset.min_objects <= dataset.max_objects");
    if (dataset.ring_cells < 2) throw std::invalid_argument("config: dataset.ring_cells must be >= 2");
  }
  if (!(superpixels.sigma > 0)) throw std::invalid_argument("config: superpixels.sigma must be > 0");
  if (superpixels.offsets.empty()) throw std::invalid_argument("config: superpixels.offsets must not be empty");
  for (int o : superpixels.offsets)
    if (o < 1) throw std::invalid_argument("config: superpixel offsets must be >= 1");
  if (superpixels.stride < 1) throw std::invalid_argument("config: superpixels.stride must be >= 1");
  agent.validate();
  reward.validate();
  pretrain.embedding.validate();
  if (reward_suite != "circles" && reward_suite != "ring" && reward_suite != "supervised-dice" &&
      reward_suite != "mixed")
    throw std::invalid_argument("config: run.reward_suite must be circles, ring, supervised-dice or mixed");
  if (training.steps < 0) throw std::invalid_argument("config: training.steps must be >= 0");
  if (training.eval_every < 1 || training.log_every < 1)
    throw std::invalid_argument("config: training.eval_every and log_every must be >= 1");
  if (training.keep_checkpoints < 0) throw std::invalid_argument("config: training.keep_checkpoints must be >= 0");
  if (!(training.heldout_fraction > 0 && training.heldout_fraction < 1))
    throw std::invalid_argument("config: training.heldout_fraction must lie in (0, 1)");
  if (agent.feature_mode == agent::FeatureMode::pretrained && training.pretrained_encoder.empty())
    throw std::invalid_argument("config: pretrained features need training.pretrained_encoder");
  if (pretrain.epochs < 0) throw std::invalid_argument("config: pretrain.epochs must be >= 0");
}

ExperimentConfig parse_config(const std::string& content) {
  boost::property_tree::ptree tree;
  std::istringstream in(content);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  ExperimentConfig cfg;
  auto table = fields(cfg);
  std::set<std::string> sections;
  for (const Field& f : table) sections.insert(f.section);
  for (const auto& [section, body] : tree) {
    if (!sections.count(section)) {
      if (body.empty()) throw std::invalid_argument("config: key '" + section + "' outside any section");
      throw std::invalid_argument("config: unknown section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      auto it = std::find_if(table.begin(), table.end(),
                             [&](const Field& f) { return f.section == section && f.key == key; });
      if (it == table.end()) throw std::invalid_argument("config: unknown key " + section + "." + key);
      it->set(value.data());
    }
  }
  cfg.agent.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_ini(const ExperimentConfig& cfg) {
  ExperimentConfig copy = cfg;
  std::ostringstream out;
  std::string section;
  for (const Field& f : fields(copy)) {
    if (f.section != section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    out << f.key << " = " << f.get() << '\n';
  }
  return out.str();
}

}  // namespace priorseg::harness
