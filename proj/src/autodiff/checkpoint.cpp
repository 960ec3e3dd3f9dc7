#include "priorseg/autodiff.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace priorseg::ad {
namespace {

static_assert(sizeof(double) == 8);

void put_le(std::ostream& os, double x) {
  auto bits = std::bit_cast<std::uint64_t>(x);
  char buf[8];
  for (int b = 0; b < 8; ++b) buf[b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  os.write(buf, 8);
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace

void Checkpoint::put(const std::string& name, Matrix value) {
  if (name.empty() || name.find_first_of(" \t\n") != std::string::npos)
    throw std::invalid_argument("checkpoint entry names must be non-empty without whitespace");
  for (auto& [n, v] : entries) {
    if (n == name) {
      v = std::move(value);
      return;
    }
  }
  entries.emplace_back(name, std::move(value));
}

const Matrix& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, v] : entries)
    if (n == name) return v;
  throw std::out_of_range("checkpoint has no entry '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& e : entries)
    if (e.first == name) return true;
  return false;
}

void write_checkpoint(const std::string& stem, const Checkpoint& ckpt) {
  std::ofstream manifest(stem + ".manifest");
  std::ofstream blob(stem + ".bin", std::ios::binary);
  if (!manifest || !blob) throw std::runtime_error("cannot write checkpoint '" + stem + "'");
  std::uint64_t offset = 0;
  for (const auto& [name, m] : ckpt.entries) {
    manifest << name << ' ' << m.rows() << ' ' << m.cols() << ' ' << offset << '\n';
    for (Index i = 0; i < m.size(); ++i) put_le(blob, m.data()[i]);
    offset += static_cast<std::uint64_t>(m.size()) * 8;
  }
  if (!manifest || !blob) throw std::runtime_error("failed writing checkpoint '" + stem + "'");
}

Checkpoint read_checkpoint(const std::string& stem) {
  std::ifstream manifest(stem + ".manifest");
  std::ifstream blob(stem + ".bin", std::ios::binary);
  if (!manifest || !blob) throw std::runtime_error("cannot open checkpoint '" + stem + "'");
  std::string bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  Checkpoint ckpt;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string name;
    Index rows = 0, cols = 0;
    std::uint64_t offset = 0;
    if (!(is >> name >> rows >> cols >> offset) || rows < 0 || cols < 0)
      throw std::runtime_error("malformed checkpoint manifest line: " + line);
    const std::uint64_t need = offset + static_cast<std::uint64_t>(rows * cols) * 8;
    if (need > bytes.size())
      throw std::runtime_error("checkpoint blob too short for entry '" + name + "'");
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = get_le(data + offset + 8 * i);
    ckpt.entries.emplace_back(name, std::move(m));
  }
  return ckpt;
}

void export_params(const ParameterSet& params, const std::string& prefix, Checkpoint& ckpt,
                   bool with_moments) {
  for (const Parameter& p : params) {
    ckpt.put(prefix + p.name, p.value);
    if (with_moments) {
      ckpt.put(prefix + p.name + "/adam_m", p.adam_m);
      ckpt.put(prefix + p.name + "/adam_v", p.adam_v);
    }
  }
  if (with_moments)
    ckpt.put(prefix + "adam_step", Matrix::Constant(1, 1, static_cast<double>(params.step_count())));
}

void import_params(ParameterSet& params, const std::string& prefix, const Checkpoint& ckpt) {
  for (Parameter& p : params) {
    const Matrix& v = ckpt.get(prefix + p.name);
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols())
      throw ShapeError("import_params", p.name + " expects " + shape_string(p.value) + ", checkpoint has " +
                                            shape_string(v));
    p.value = v;
    if (ckpt.contains(prefix + p.name + "/adam_m")) {
      p.adam_m = ckpt.get(prefix + p.name + "/adam_m");
      p.adam_v = ckpt.get(prefix + p.name + "/adam_v");
    }
    p.grad.setZero();
  }
  if (ckpt.contains(prefix + "adam_step"))
    params.set_step_count(static_cast<std::int64_t>(ckpt.get(prefix + "adam_step")(0, 0)));
}

}  // namespace priorseg::ad
