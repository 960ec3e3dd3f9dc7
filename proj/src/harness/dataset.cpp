#include "priorseg/harness.hpp"

#include <json.hpp>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace fs = std::filesystem;

namespace priorseg::harness {
namespace {

std::string numbered(const std::string& dir, const char* prefix, int i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04d%s", prefix, i, ext);
  return (fs::path(dir) / buf).string();
}

}  // namespace

int thread_count() {
  if (const char* env = std::getenv("PRIORSEG_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(int n, const std::function<void(int)>& fn) {
  const int workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

Dataset generate_dataset(const DatasetSpec& spec) {
  if (spec.count < 1) throw std::invalid_argument("dataset count must be >= 1");
  Dataset d;
  d.kind = spec.kind;
  if (spec.kind == "circles")
    d.samples = imaging::generate_circles(spec.count, spec.size, {spec.min_objects, spec.max_objects}, spec.seed);
  else if (spec.kind == "ring")
    d.samples = imaging::generate_ellipse_ring(spec.count, spec.size, spec.ring_cells, spec.seed, spec.ring_fraction);
  else
    throw std::invalid_argument("unknown dataset kind '" + spec.kind + "'");
  return d;
}

void write_dataset(const std::string& dir, const Dataset& data, const DatasetSpec& spec, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw std::runtime_error("output directory " + dir + " is not empty (use --force)");
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.starts_with("image_") || name.starts_with("labels_") || name == "manifest.json")
        fs::remove(entry.path());
    }
  }
  fs::create_directories(dir);
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    imaging::write_pgm(numbered(dir, "image", static_cast<int>(i), ".pgm"), data.samples[i].image);
    imaging::write_labels(numbered(dir, "labels", static_cast<int>(i), ".lbl"), data.samples[i].truth);
  }
  nlohmann::ordered_json m;
  m["generator"] = kVersion;
  m["kind"] = data.kind;
  m["count"] = data.samples.size();
  m["size"] = spec.size;
  m["seed"] = spec.seed;
  if (data.kind == "circles") {
    m["min_objects"] = spec.min_objects;
    m["max_objects"] = spec.max_objects;
  } else {
    m["ring_cells"] = spec.ring_cells;
    m["ring_fraction"] = spec.ring_fraction;
  }
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << m.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing manifest in " + dir);
}

Dataset read_dataset(const std::string& dir) {
  const fs::path manifest = fs::path(dir) / "manifest.json";
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("no dataset manifest at " + manifest.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("bad dataset manifest " + manifest.string() + ": " + e.what());
  }
  Dataset d;
  d.kind = m.at("kind").get<std::string>();
  const int count = m.at("count").get<int>();
  if (count < 1) throw std::runtime_error("dataset " + dir + " is empty");
  d.samples.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    auto& s = d.samples[static_cast<std::size_t>(i)];
    s.image = imaging::read_pgm(numbered(dir, "image", i, ".pgm"));
    s.truth = imaging::read_labels(numbered(dir, "labels", i, ".lbl"));
    if (s.image.rows() != s.truth.rows() || s.image.cols() != s.truth.cols())
      throw std::runtime_error("image and labels " + std::to_string(i) + " differ in shape");
  }
  return d;
}

Dataset load_dataset(const DatasetSpec& spec) {
  return spec.dir.empty() ? generate_dataset(spec) : read_dataset(spec.dir);
}

Split split_dataset(int count, double heldout_fraction) {
  if (count < 2) throw std::invalid_argument("need at least 2 images to split");
  int held = static_cast<int>(std::lround(count * heldout_fraction));
  held = std::clamp(held, 1, count - 1);
  Split s;
  for (int i = 0; i < count; ++i) (i < count - held ? s.train : s.heldout).push_back(i);
  return s;
}

std::vector<imaging::LabelMap> compute_superpixels(const Dataset& data, const imaging::SuperpixelParams& params) {
  std::vector<imaging::LabelMap> out(data.samples.size());
  parallel_for(static_cast<int>(out.size()), [&](int i) {
    out[static_cast<std::size_t>(i)] = imaging::mws_superpixels(data.samples[static_cast<std::size_t>(i)].image, params);
  });
  return out;
}

}  // namespace priorseg::harness
