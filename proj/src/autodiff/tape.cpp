#include "priorseg/autodiff.hpp"

#include <sstream>

namespace priorseg::ad {

ShapeError::ShapeError(const std::string& primitive, const std::string& detail)
    : std::invalid_argument(primitive + ": shape mismatch " + detail) {}

std::string shape_string(const Matrix& m) {
  std::ostringstream os;
  os << '(' << m.rows() << 'x' << m.cols() << ')';
  return os.str();
}

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("scalar", shape_string(v));
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false, false});
  return {this, nodes_.size() - 1};
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, true, false});
  return {this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p, bool trainable) {
  nodes_.push_back(Node{p.value, {}, {}, trainable ? &p : nullptr, trainable, false});
  return {this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::vector<std::size_t> inputs, Backward backward) {
  bool needs = false;
  for (std::size_t in : inputs) needs = needs || nodes_[in].requires_grad;
  Node node{std::move(value), {}, {}, nullptr, needs, false};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var loss) {
  if (loss.value().size() != 1)
    throw ShapeError("backward", "loss must be scalar, got " + shape_string(loss.value()));
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  accumulate(loss.id(), Matrix::Ones(1, 1));
  for (std::size_t k = loss.id() + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.has_grad) continue;
    if (n.param != nullptr) {
      if (n.param->grad.rows() != n.value.rows() || n.param->grad.cols() != n.value.cols())
        n.param->grad = Matrix::Zero(n.value.rows(), n.value.cols());
      n.param->grad += n.grad;
    }
    if (n.backward) n.backward(*this, n.grad);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

}  // namespace priorseg::ad
