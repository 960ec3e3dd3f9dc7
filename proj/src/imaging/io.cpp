#include "priorseg/imaging.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace priorseg::imaging {
namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int k = 0; k < 4; ++k) b[k] = static_cast<char>((v >> (8 * k)) & 0xffu);
  os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<char>((bits >> (8 * k)) & 0xffu);
  os.write(b, 8);
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("unexpected end of file");
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  return std::bit_cast<double>(bits);
}

void expect_magic(std::istream& is, const char* magic, const std::string& path) {
  char m[4];
  if (!is.read(m, 4) || std::memcmp(m, magic, 4) != 0)
    throw std::runtime_error(path + ": missing " + std::string(magic, 4) + " magic");
}

// PGM header tokens, skipping '#' comments.
std::string pgm_token(std::istream& is) {
  std::string tok;
  char ch;
  while (is.get(ch)) {
    if (ch == '#') {
      std::string rest;
      std::getline(is, rest);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

}  // namespace

void write_pgm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "P5\n" << img.cols() << ' ' << img.rows() << "\n255\n";
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    const double v = std::clamp(img.data()[i], 0.0, 1.0);
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  if (!os) throw std::runtime_error("failed writing " + path);
}

Image read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  if (pgm_token(is) != "P5") throw std::runtime_error(path + ": not a binary PGM");
  const int w = std::stoi(pgm_token(is));
  const int h = std::stoi(pgm_token(is));
  const int maxval = std::stoi(pgm_token(is));
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw std::runtime_error(path + ": unsupported PGM header");
  Image img(h, w);
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    const int ch = is.get();
    if (ch == EOF) throw std::runtime_error(path + ": truncated pixel data");
    img.data()[i] = static_cast<double>(ch) / maxval;
  }
  return img;
}

void write_labels(const std::string& path, const LabelMap& labels) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write("LBL1", 4);
  put_u32(os, static_cast<std::uint32_t>(labels.rows()));
  put_u32(os, static_cast<std::uint32_t>(labels.cols()));
  for (Eigen::Index i = 0; i < labels.size(); ++i) put_u32(os, static_cast<std::uint32_t>(labels.data()[i]));
  if (!os) throw std::runtime_error("failed writing " + path);
}

LabelMap read_labels(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  expect_magic(is, "LBL1", path);
  const auto h = get_u32(is), w = get_u32(is);
  LabelMap labels(h, w);
  for (Eigen::Index i = 0; i < labels.size(); ++i) labels.data()[i] = static_cast<std::int32_t>(get_u32(is));
  return labels;
}

void write_features(const std::string& path, const ad::Matrix& features) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write("FEA1", 4);
  put_u32(os, static_cast<std::uint32_t>(features.rows()));
  put_u32(os, static_cast<std::uint32_t>(features.cols()));
  for (Eigen::Index i = 0; i < features.size(); ++i) put_f64(os, features.data()[i]);
  if (!os) throw std::runtime_error("failed writing " + path);
}

ad::Matrix read_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  expect_magic(is, "FEA1", path);
  const auto rows = get_u32(is), dim = get_u32(is);
  ad::Matrix f(rows, dim);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = get_f64(is);
  return f;
}

}  // namespace priorseg::imaging
