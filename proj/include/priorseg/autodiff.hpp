#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// Every value recorded on a Tape is a 2-D matrix; vectors are 1xN or Nx1 and
// scalars are 1x1. Operations are free functions taking Var handles and
// recording their local backward rule on the tape of their inputs.

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace priorseg::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// Raised when operand shapes do not conform for a primitive.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& primitive, const std::string& detail);
};

std::string shape_string(const Matrix& m);

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;
};

/// Named trainable tensors plus their Adam state. Element addresses are stable
/// for the lifetime of the set, so tapes may hold pointers into it.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Matrix value);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  void zero_grad();
  std::size_t size() const { return params_.size(); }
  std::int64_t step_count() const { return step_; }
  void set_step_count(std::int64_t s) { step_ = s; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  friend void adam_step(ParameterSet&, double, double, double, double);
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
  std::int64_t step_ = 0;
};

class Tape;

/// Lightweight handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records primitives in topological order. Backward closures only touch
/// nodes with smaller ids, so a single reverse sweep suffices.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  Var constant(Matrix value);
  /// Leaf whose gradient is kept on the tape (used for input sensitivities).
  Var variable(Matrix value);
  /// Leaf bound to a parameter; backward accumulates into parameter.grad.
  /// With trainable = false the parameter enters as a constant.
  Var param(Parameter& p, bool trainable = true);

  Var record(Matrix value, std::vector<std::size_t> inputs, Backward backward);

  void backward(Var loss);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  void accumulate(std::size_t id, const Matrix& g);
  template <typename Expr>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Expr>& g) {
    accumulate(id, Matrix(g));
  }
  /// Gradient of the last backward pass with respect to a node (zero if unreached).
  Matrix grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
  };
  std::vector<Node> nodes_;
};

// --- primitives --------------------------------------------------------------

Var matmul(Var a, Var b);
/// Elementwise sum; b may also be a 1xC row (broadcast over rows) or 1x1.
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product; b may also be an Rx1 column, a 1xC row, or 1x1.
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);

Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
/// Natural log with inputs clamped to at least 1e-12.
Var log(Var a);
/// log(1 + exp(a)), numerically stable.
Var softplus(Var a);
/// Square root with inputs clamped to at least 1e-12.
Var sqrt(Var a);
Var square(Var a);
/// Values clamped to [lo, hi]; zero gradient where clamped.
Var clamp(Var a, double lo, double hi);

Var sum(Var a);
/// axis 0 reduces rows (result 1xC); axis 1 reduces columns (result Rx1).
Var sum(Var a, int axis);
Var mean(Var a);
Var mean(Var a, int axis);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, Index begin, Index count);
/// Row-major reshape.
Var reshape(Var a, Index rows, Index cols);
/// out.row(k) = a.row(indices[k]).
Var gather_rows(Var a, std::span<const int> indices);
/// Side-by-side row gathers: block k of out.row(p) is a.row(index_sets[k][p]).
/// All index sets must have the same length.
Var gather_stack(Var a, std::span<const std::vector<int>> index_sets);
/// out.row(s) = mean of a.row(k) over k with segment[k] == s; empty segments are zero.
Var segment_mean(Var a, std::span<const int> segment, Index num_segments);
Var segment_sum(Var a, std::span<const int> segment, Index num_segments);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }

// --- optimisation --------------------------------------------------------------

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of every parameter, then clears gradients.
/// Throws std::runtime_error naming the first parameter with a non-finite gradient.
void adam_step(ParameterSet& params, double lr, double beta1, double beta2, double eps);
inline void adam_step(ParameterSet& params, const AdamConfig& cfg) {
  adam_step(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
}

/// Fully connected stack "layer{k}.weight" (in x out) / "layer{k}.bias" (1 x out).
/// Weights are He-uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)); biases are zero.
ParameterSet initialize_params(std::span<const int> layer_sizes, std::uint64_t seed);

/// Same initialisation, appended to an existing set under a name prefix.
void append_dense_layers(ParameterSet& params, const std::string& prefix,
                         std::span<const int> layer_sizes, std::uint64_t seed);

// --- checkpoints ---------------------------------------------------------------

/// Ordered named matrices persisted as "<stem>.manifest" (one line per entry:
/// name rows cols byte_offset) plus "<stem>.bin" (little-endian float64 blob).
struct Checkpoint {
  std::vector<std::pair<std::string, Matrix>> entries;

  void put(const std::string& name, Matrix value);
  const Matrix& get(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void write_checkpoint(const std::string& stem, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& stem);

/// Adds every parameter (and its Adam moments when with_moments) under prefix.
void export_params(const ParameterSet& params, const std::string& prefix, Checkpoint& ckpt,
                   bool with_moments);
/// Restores values (and moments/step count when present); shapes must match.
void import_params(ParameterSet& params, const std::string& prefix, const Checkpoint& ckpt);

}  // namespace priorseg::ad
