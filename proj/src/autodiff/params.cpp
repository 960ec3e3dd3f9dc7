#include "priorseg/autodiff.hpp"

#include <cmath>
#include <random>

namespace priorseg::ad {

Parameter& ParameterSet::add(const std::string& name, Matrix value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  Parameter p;
  p.name = name;
  p.grad = Matrix::Zero(value.rows(), value.cols());
  p.adam_m = Matrix::Zero(value.rows(), value.cols());
  p.adam_v = Matrix::Zero(value.rows(), value.cols());
  p.value = std::move(value);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter& ParameterSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return params_[it->second];
}

const Parameter& ParameterSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return params_[it->second];
}

bool ParameterSet::contains(const std::string& name) const { return index_.count(name) > 0; }

void ParameterSet::zero_grad() {
  for (Parameter& p : params_) p.grad.setZero();
}

void adam_step(ParameterSet& params, double lr, double beta1, double beta2, double eps) {
  for (const Parameter& p : params.params_) {
    if (!p.grad.allFinite())
      throw std::runtime_error("adam_step: non-finite gradient in parameter '" + p.name + "'");
  }
  ++params.step_;
  const double t = static_cast<double>(params.step_);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (Parameter& p : params.params_) {
    p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * p.grad;
    p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * Matrix(p.grad.array().square());
    Matrix mhat = p.adam_m / c1;
    Matrix vhat = p.adam_v / c2;
    p.value.array() -= lr * mhat.array() / (vhat.array().sqrt() + eps);
    p.grad.setZero();
  }
}

void append_dense_layers(ParameterSet& params, const std::string& prefix,
                         std::span<const int> layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2) throw std::invalid_argument("dense stack needs at least two sizes");
  for (int s : layer_sizes)
    if (s <= 0) throw std::invalid_argument("layer sizes must be positive");
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k + 1 < layer_sizes.size(); ++k) {
    const int fan_in = layer_sizes[k];
    const int fan_out = layer_sizes[k + 1];
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix w(fan_in, fan_out);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
    const std::string stem = prefix + "layer" + std::to_string(k);
    params.add(stem + ".weight", std::move(w));
    params.add(stem + ".bias", Matrix::Zero(1, fan_out));
  }
}

ParameterSet initialize_params(std::span<const int> layer_sizes, std::uint64_t seed) {
  ParameterSet params;
  append_dense_layers(params, "", layer_sizes, seed);
  return params;
}

}  // namespace priorseg::ad
